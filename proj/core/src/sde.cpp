#include "qdb/sde.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace qdb {

namespace detail {

double bisect_level(const DomainSpec& dom, const Vec& x0, const Vec& x1, double level, Vec& out) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 80 && (hi - lo) > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        out = x0 + mid * (x1 - x0);
        if (dom.psi(out) > level)
            lo = mid;
        else
            hi = mid;
    }
    const double s = 0.5 * (lo + hi);
    out = x0 + s * (x1 - x0);
    return s;
}

}  // namespace detail

double PathEnsemble::capped_fraction() const {
    if (paths.empty()) return 0.0;
    std::size_t capped = 0;
    for (const auto& p : paths) capped += p.capped ? 1 : 0;
    return static_cast<double>(capped) / static_cast<double>(paths.size());
}

namespace {

// Visitor returns false to abort the walk; an aborted walk reports
// exit_step = -2 and its summary is not meaningful.
template <class Visitor>
PathSummary walk_one(const ProblemSpec& spec, const DomainSpec& dom, const Vec& x0, double h,
                     std::size_t cap_steps, bool refine_exit, const NoiseSource& noise,
                     std::uint64_t path_id, Visitor&& visit) {
    const double sqrt_h = std::sqrt(h);
    Vec x = x0, z(spec.d1), dw(spec.d1), x_next(spec.d);
    PathSummary ps;
    for (std::size_t i = 0; i < cap_steps; ++i) {
        noise.standard_normals(path_id, i, z);
        dw = sqrt_h * z;
        detail::euler_step(spec, x, dw, h, x_next);
        if (!x_next.allFinite()) {
            std::ostringstream os;
            os << "simulate: non-finite state on path " << path_id << " at step " << i + 1;
            throw std::runtime_error(os.str());
        }
        if (!visit(i, static_cast<double>(i) * h, x, dw, x_next)) {
            ps.exit_step = -2;
            ps.exit_state = x_next;
            return ps;
        }
        if (dom.psi(x_next) <= 0.0) {
            ps.exit_step = static_cast<std::int64_t>(i + 1);
            ps.exit_time = static_cast<double>(i + 1) * h;
            ps.capped = false;
            if (refine_exit) {
                Vec crossing(spec.d);
                const double s = detail::bisect_level(dom, x, x_next, 0.0, crossing);
                ps.refined_exit_time = (static_cast<double>(i) + s) * h;
                ps.exit_state = crossing;
            } else {
                ps.refined_exit_time = ps.exit_time;
                ps.exit_state = x_next;
            }
            return ps;
        }
        x.swap(x_next);
    }
    ps.exit_step = -1;
    ps.exit_time = static_cast<double>(cap_steps) * h;
    ps.refined_exit_time = ps.exit_time;
    ps.exit_state = x;
    ps.capped = true;
    return ps;
}

}  // namespace

PathEnsemble simulate_ensemble(const ProblemSpec& spec, const DomainSpec& dom, const Vec& x0,
                               const SimOptions& opts) {
    if (!(opts.h > 0.0)) throw std::invalid_argument("simulate_ensemble: h must be positive");
    if (opts.n_paths < 1) throw std::invalid_argument("simulate_ensemble: n_paths must be >= 1");
    if (!(dom.psi(x0) > 0.0))
        throw std::invalid_argument("simulate_ensemble: start point outside D");

    PathEnsemble ens;
    ens.x0 = x0;
    ens.h = opts.h;
    ens.t_max = opts.t_max > 0.0 ? opts.t_max : 50.0 * psi_sup_estimate(dom);
    ens.n_paths = opts.n_paths;
    ens.seed = opts.seed;
    ens.d = spec.d;
    ens.d1 = spec.d1;
    ens.refine_exit = opts.refine_exit;
    ens.paths.resize(opts.n_paths);
    if (opts.store) {
        ens.store.emplace();
        ens.store->states.resize(opts.n_paths);
        ens.store->increments.resize(opts.n_paths);
    }

    const PhiloxNoise noise(opts.seed);
    const std::size_t cap = ens.cap_steps();

    parallel_for(
        opts.n_paths,
        [&](std::size_t p) {
            if (!opts.store) {
                ens.paths[p] =
                    walk_one(spec, dom, x0, opts.h, cap, opts.refine_exit, noise, p,
                             [](std::size_t, double, const Vec&, const Vec&, const Vec&) {
                                 return true;
                             });
                return;
            }
            std::vector<Vec> states;
            std::vector<Vec> incs;
            states.push_back(x0);
            ens.paths[p] = walk_one(spec, dom, x0, opts.h, cap, opts.refine_exit, noise, p,
                                    [&](std::size_t, double, const Vec&, const Vec& dw,
                                        const Vec& x_next) {
                                        states.push_back(x_next);
                                        incs.push_back(dw);
                                        return true;
                                    });
            Mat sm(static_cast<Eigen::Index>(states.size()), spec.d);
            for (std::size_t i = 0; i < states.size(); ++i)
                sm.row(static_cast<Eigen::Index>(i)) = states[i].transpose();
            Mat im(static_cast<Eigen::Index>(incs.size()), spec.d1);
            for (std::size_t i = 0; i < incs.size(); ++i)
                im.row(static_cast<Eigen::Index>(i)) = incs[i].transpose();
            ens.store->states[p] = std::move(sm);
            ens.store->increments[p] = std::move(im);
        },
        opts.threads);

    return ens;
}

void replay_path(const ProblemSpec& spec, const DomainSpec& dom, const PathEnsemble& ens,
                 std::size_t path_id, const StepVisitor& visit) {
    if (path_id >= ens.n_paths) throw std::invalid_argument("replay_path: path id out of range");
    const PhiloxNoise noise(ens.seed);
    walk_one(spec, dom, ens.x0, ens.h, ens.cap_steps(), ens.refine_exit, noise, path_id,
             [&](std::size_t i, double t, const Vec& x, const Vec& dw, const Vec& x_next) {
                 return visit(i, t, x, dw, x_next);
             });
}

ExitStatistics exit_statistics(const PathEnsemble& ens, const DomainSpec& dom,
                               double psi_sup_hint) {
    if (ens.paths.empty()) throw std::invalid_argument("exit_statistics: empty ensemble");
    ExitStatistics st;
    std::vector<double> taus;
    std::vector<double> taus_sq;
    taus.reserve(ens.paths.size());
    for (const auto& p : ens.paths) {
        if (p.capped) continue;
        taus.push_back(p.refined_exit_time);
        taus_sq.push_back(p.refined_exit_time * p.refined_exit_time);
    }
    st.capped_fraction = ens.capped_fraction();
    st.capped_warning = st.capped_fraction > 0.01;
    st.psi_x0 = dom.psi(ens.x0);
    st.psi_sup = psi_sup_hint > 0.0 ? psi_sup_hint : psi_sup_estimate(dom);
    if (taus.empty()) {
        st.verdict = "inconclusive";
        return st;
    }
    st.tau = sample_stats(taus);
    const SampleStats sq = sample_stats(taus_sq);
    st.second_moment = sq.mean;
    st.second_moment_se = sq.stderr_mean;
    st.mean_bound_pass = st.tau.mean - 3.0 * st.tau.stderr_mean <= st.psi_x0;
    st.second_bound_pass =
        st.second_moment - 3.0 * st.second_moment_se <= 2.0 * st.psi_sup * st.psi_x0;
    if (st.capped_warning)
        st.verdict = "inconclusive";
    else
        st.verdict = (st.mean_bound_pass && st.second_bound_pass) ? "pass" : "fail";
    return st;
}

namespace {

constexpr char kMagic[8] = {'Q', 'D', 'B', 'E', 'N', 'S', '1', '\0'};

template <class T>
void put(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("ensemble file truncated");
    return v;
}

}  // namespace

void save_ensemble(const std::string& path, const PathEnsemble& ens) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_ensemble: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, 1);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ens.d));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ens.d1));
    put<std::uint32_t>(os, ens.store ? 1u : 0u);
    put<std::uint64_t>(os, ens.n_paths);
    put<std::uint64_t>(os, ens.seed);
    put<double>(os, ens.h);
    put<double>(os, ens.t_max);
    put<std::uint32_t>(os, ens.refine_exit ? 1u : 0u);
    for (Eigen::Index i = 0; i < ens.x0.size(); ++i) put<double>(os, ens.x0[i]);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const auto& ps = ens.paths[p];
        put<std::int64_t>(os, ps.exit_step);
        put<double>(os, ps.exit_time);
        put<double>(os, ps.refined_exit_time);
        put<std::uint8_t>(os, ps.capped ? 1 : 0);
        for (Eigen::Index i = 0; i < ps.exit_state.size(); ++i) put<double>(os, ps.exit_state[i]);
        if (ens.store) {
            const Mat& sm = ens.store->states[p];
            const Mat& im = ens.store->increments[p];
            put<std::uint64_t>(os, static_cast<std::uint64_t>(sm.rows()));
            for (Eigen::Index r = 0; r < sm.rows(); ++r)
                for (Eigen::Index c = 0; c < sm.cols(); ++c) put<double>(os, sm(r, c));
            put<std::uint64_t>(os, static_cast<std::uint64_t>(im.rows()));
            for (Eigen::Index r = 0; r < im.rows(); ++r)
                for (Eigen::Index c = 0; c < im.cols(); ++c) put<double>(os, im(r, c));
        }
    }
}

PathEnsemble load_ensemble(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_ensemble: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_ensemble: bad magic");
    const auto version = get<std::uint32_t>(is);
    if (version != 1) throw std::runtime_error("load_ensemble: unsupported version");
    PathEnsemble ens;
    ens.d = static_cast<int>(get<std::uint32_t>(is));
    ens.d1 = static_cast<int>(get<std::uint32_t>(is));
    const bool has_store = get<std::uint32_t>(is) != 0;
    ens.n_paths = get<std::uint64_t>(is);
    ens.seed = get<std::uint64_t>(is);
    ens.h = get<double>(is);
    ens.t_max = get<double>(is);
    ens.refine_exit = get<std::uint32_t>(is) != 0;
    ens.x0.resize(ens.d);
    for (int i = 0; i < ens.d; ++i) ens.x0[i] = get<double>(is);
    ens.paths.resize(ens.n_paths);
    if (has_store) {
        ens.store.emplace();
        ens.store->states.resize(ens.n_paths);
        ens.store->increments.resize(ens.n_paths);
    }
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        auto& ps = ens.paths[p];
        ps.exit_step = get<std::int64_t>(is);
        ps.exit_time = get<double>(is);
        ps.refined_exit_time = get<double>(is);
        ps.capped = get<std::uint8_t>(is) != 0;
        ps.exit_state.resize(ens.d);
        for (int i = 0; i < ens.d; ++i) ps.exit_state[i] = get<double>(is);
        if (has_store) {
            const auto n_states = get<std::uint64_t>(is);
            Mat sm(static_cast<Eigen::Index>(n_states), ens.d);
            for (Eigen::Index r = 0; r < sm.rows(); ++r)
                for (Eigen::Index c = 0; c < sm.cols(); ++c) sm(r, c) = get<double>(is);
            const auto n_incs = get<std::uint64_t>(is);
            Mat im(static_cast<Eigen::Index>(n_incs), ens.d1);
            for (Eigen::Index r = 0; r < im.rows(); ++r)
                for (Eigen::Index c = 0; c < im.cols(); ++c) im(r, c) = get<double>(is);
            ens.store->states[p] = std::move(sm);
            ens.store->increments[p] = std::move(im);
        }
    }
    return ens;
}

}  // namespace qdb
