#include "qdb/bsde.hpp"

#include <cmath>
#include <sstream>

#include "qdb/numeric.hpp"

namespace qdb {

namespace {

// y/z dependence probe for the driver-free route.
bool driver_depends_on_yz(const ProblemSpec& spec, const DomainSpec& dom) {
    const auto grid = sample_interior_grid(dom, 9, false);
    const CounterRng rng(0xf00du, RngStream::Sampling);
    int tried = 0;
    for (std::size_t i = 0; i < grid.size() && tried < 10; i += std::max<std::size_t>(1, grid.size() / 10), ++tried) {
        Vec y(spec.k);
        Mat z(spec.k, spec.d1);
        for (int j = 0; j < spec.k; ++j) y[j] = 2.0 * rng.uniform(i, 0, j) - 1.0;
        for (int r = 0; r < spec.k; ++r)
            for (int c = 0; c < spec.d1; ++c) z(r, c) = 2.0 * rng.uniform(i, 1, r * spec.d1 + c) - 1.0;
        const Mat jac = spec.f_jac(grid[i], y, z);
        if (jac.rightCols(spec.k + spec.k * spec.d1).cwiseAbs().maxCoeff() > 1e-12) return true;
    }
    return false;
}

}  // namespace

std::vector<Vec> driver_free_path_values(const PathEnsemble& ens, const ProblemSpec& spec,
                                         const DomainSpec& dom) {
    const int k = spec.k;
    const Vec y0 = Vec::Zero(k);
    const Mat z0 = Mat::Zero(k, spec.d1);
    std::vector<Vec> values(ens.n_paths);
    parallel_for(ens.n_paths, [&](std::size_t p) {
        const PathSummary& ps = ens.paths[p];
        Vec acc = Vec::Zero(k);
        replay_path(spec, dom, ens, p,
                    [&](std::size_t i, double t, const Vec& x, const Vec&, const Vec&) {
                        double dt = ens.h;
                        if (!ps.capped && static_cast<std::int64_t>(i) == ps.exit_step - 1)
                            dt = ps.refined_exit_time - t;
                        acc += spec.f(x, y0, z0) * dt;
                        return true;
                    });
        values[p] = spec.g(ps.exit_state) + acc;
    });
    return values;
}

BsdeSolution estimate_u_driver_free(const PathEnsemble& ens, const ProblemSpec& spec,
                                    const DomainSpec& dom) {
    if (ens.n_paths == 0) throw std::invalid_argument("estimate_u_driver_free: empty ensemble");
    if (driver_depends_on_yz(spec, dom))
        throw std::invalid_argument(
            "estimate_u_driver_free: driver depends on (y, z); use solve_picard");

    const int k = spec.k;
    const auto values = driver_free_path_values(ens, spec, dom);
    std::vector<std::vector<double>> per_comp(k);
    for (auto& v : per_comp) v.resize(ens.n_paths);
    std::vector<double> g_mag(ens.n_paths, 0.0);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        for (int c = 0; c < k; ++c) per_comp[c][p] = values[p][c];
        g_mag[p] = spec.g(ens.paths[p].exit_state).norm();
    }

    BsdeSolution sol;
    sol.method = BsdeMethod::DriverFree;
    sol.y0.resize(k);
    sol.ci95.resize(k);
    for (int c = 0; c < k; ++c) {
        const SampleStats st = sample_stats(per_comp[c]);
        sol.y0[c] = st.mean;
        sol.ci95[c] = st.ci95_halfwidth;
    }
    sol.iterations = 1;
    sol.converged = true;
    const H7Report h7 = check_h7(spec.mu, spec.L, spec.L0, spec.beta, spec.vartheta);
    sol.h7_ok = h7.pass;
    double gmax = 0;
    for (double v : g_mag) gmax = std::max(gmax, v);
    sol.capped_bias_bound = gmax * ens.capped_fraction();
    return sol;
}

std::vector<std::function<double(const Vec&)>> make_default_basis(const ProblemSpec& spec,
                                                                  const DomainSpec& dom,
                                                                  int degree, bool include_psi,
                                                                  bool include_g) {
    std::vector<std::function<double(const Vec&)>> basis;
    // Monomials of total degree <= degree, enumerated by exponent vectors.
    std::vector<int> expo(spec.d, 0);
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == spec.d) {
            const std::vector<int> e = expo;
            basis.push_back([e](const Vec& x) {
                double v = 1.0;
                for (std::size_t i = 0; i < e.size(); ++i)
                    for (int q = 0; q < e[i]; ++q) v *= x[static_cast<Eigen::Index>(i)];
                return v;
            });
            return;
        }
        for (int q = 0; q <= remaining; ++q) {
            expo[pos] = q;
            rec(pos + 1, remaining - q);
        }
        expo[pos] = 0;
    };
    rec(0, degree);
    if (include_psi) basis.push_back([&dom](const Vec& x) { return dom.psi(x); });
    if (include_g) {
        for (int c = 0; c < spec.k; ++c)
            basis.push_back([&spec, c](const Vec& x) { return spec.g(x)[c]; });
    }
    return basis;
}

BsdeSolution solve_picard(const PathEnsemble& ens, const ProblemSpec& spec, const DomainSpec& dom,
                          const PicardOptions& opts) {
    if (!ens.store)
        throw std::invalid_argument("solve_picard: requires an ensemble simulated with storage");
    if (ens.n_paths == 0) throw std::invalid_argument("solve_picard: empty ensemble");

    const int k = spec.k;
    const int d1 = spec.d1;
    const auto basis =
        make_default_basis(spec, dom, opts.basis_degree, opts.basis_include_psi, opts.basis_include_g);
    const int n_feat = static_cast<int>(basis.size());

    auto driver = opts.driver;
    if (!driver)
        driver = [&spec](std::size_t, std::size_t, const Vec& x, const Vec& y, const Mat& ztilde) {
            return spec.f(x, y, ztilde);
        };
    auto target_weight = opts.target_weight;
    if (!target_weight) target_weight = [](std::size_t, std::size_t) { return 1.0; };

    // Terminal slice index per path: states 0..e_p are stored, the path is
    // alive at slices 0..e_p-1 and carries the terminal value at e_p.
    std::vector<std::size_t> e_of(ens.n_paths);
    std::vector<Vec> terminal(ens.n_paths);
    std::size_t max_e = 0;
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const auto& ps = ens.paths[p];
        e_of[p] = ps.capped ? static_cast<std::size_t>(ens.store->states[p].rows() - 1)
                            : static_cast<std::size_t>(ps.exit_step);
        terminal[p] = spec.g(ps.exit_state);
        max_e = std::max(max_e, e_of[p]);
    }

    // Fitted coefficient tables of the previous sweep (function-space
    // Picard iteration).
    std::vector<Mat> theta_prev;  // per slice, n_feat x k
    std::vector<Mat> zeta_prev;   // per slice, n_feat x (k*d1)
    bool have_prev = false;

    auto eval_features = [&](const Vec& x, Eigen::RowVectorXd& row) {
        for (int j = 0; j < n_feat; ++j) row[j] = basis[static_cast<std::size_t>(j)](x);
    };

    BsdeSolution sol;
    sol.method = BsdeMethod::Picard;
    const H7Report h7 = check_h7(spec.mu, spec.L, spec.L0, spec.beta, spec.vartheta);
    sol.h7_ok = h7.pass;
    sol.y0 = Vec::Zero(k);
    Vec y0_prev = Vec::Zero(k);

    Mat y_cur(ens.n_paths, k);           // rolling Y values at the slice being processed
    std::vector<Mat> theta(max_e), zeta(max_e);
    std::vector<double> slice0_sd(k, 0.0);

    for (int sweep = 0; sweep < opts.max_iter; ++sweep) {
        for (std::size_t isl = max_e; isl-- > 0;) {
            // Collect alive paths at slice isl.
            std::vector<std::size_t> alive;
            alive.reserve(ens.n_paths);
            for (std::size_t p = 0; p < ens.n_paths; ++p)
                if (e_of[p] > isl) alive.push_back(p);
            if (alive.empty()) continue;

            const int n_rhs = k + k * d1;
            Mat phi(static_cast<Eigen::Index>(alive.size()), n_feat);
            Mat rhs(static_cast<Eigen::Index>(alive.size()), n_rhs);
            Eigen::RowVectorXd row(n_feat);
            for (std::size_t a = 0; a < alive.size(); ++a) {
                const std::size_t p = alive[a];
                const Vec x = ens.store->states[p].row(static_cast<Eigen::Index>(isl)).transpose();
                const Vec dw =
                    ens.store->increments[p].row(static_cast<Eigen::Index>(isl)).transpose();
                const bool exits_next = (e_of[p] == isl + 1);
                const Vec y_next = exits_next ? terminal[p]
                                              : Vec(y_cur.row(static_cast<Eigen::Index>(p)).transpose());
                double dt = ens.h;
                if (exits_next && !ens.paths[p].capped)
                    dt = ens.paths[p].refined_exit_time - static_cast<double>(isl) * ens.h;

                eval_features(x, row);
                Vec y_arg;
                Mat z_arg;
                if (have_prev && theta_prev[isl].size() > 0) {
                    y_arg = theta_prev[isl].transpose() * row.transpose();
                    const Vec zflat = zeta_prev[isl].transpose() * row.transpose();
                    z_arg = Eigen::Map<const Mat>(zflat.data(), d1, k).transpose();
                } else {
                    y_arg = spec.g(x);
                    z_arg = Mat::Zero(k, d1);
                }
                const Vec v =
                    target_weight(p, isl) * y_next + driver(p, isl, x, y_arg, z_arg) * dt;
                phi.row(static_cast<Eigen::Index>(a)) = row;
                rhs.block(static_cast<Eigen::Index>(a), 0, 1, k) = v.transpose();
                for (int m = 0; m < k; ++m)
                    for (int j = 0; j < d1; ++j)
                        rhs(static_cast<Eigen::Index>(a), k + m * d1 + j) = y_next[m] * dw[j] / ens.h;
            }
            if (!phi.allFinite() || !rhs.allFinite()) {
                std::ostringstream os;
                os << "solve_picard: non-finite regression system at time slice " << isl;
                throw std::runtime_error(os.str());
            }

            Mat coef;
            if (isl == 0 || alive.size() < static_cast<std::size_t>(2 * n_feat)) {
                // Slice 0 conditions on the fixed start point, and thin tail
                // slices cannot support the full basis: fall back to the
                // plain mean (intercept-only regression).
                coef = Mat::Zero(n_feat, n_rhs);
                coef.row(0) = rhs.colwise().mean();
            } else {
                // The default basis is deliberately redundant (psi and g are
                // often polynomial), so rank deficiency is expected and the
                // pivoted QR resolves it; only a fully degenerate system is
                // an error.
                Eigen::ColPivHouseholderQR<Mat> qr(phi);
                qr.setThreshold(1e-10);
                if (qr.rank() == 0) {
                    std::ostringstream os;
                    os << "solve_picard: degenerate regression system at time slice " << isl;
                    throw std::runtime_error(os.str());
                }
                coef = qr.solve(rhs);
            }
            theta[isl] = coef.leftCols(k);
            zeta[isl] = coef.rightCols(k * d1);

            if (isl == 0) {
                sol.y0_samples.assign(ens.n_paths, Vec::Zero(k));
                for (std::size_t a = 0; a < alive.size(); ++a)
                    sol.y0_samples[alive[a]] =
                        rhs.block(static_cast<Eigen::Index>(a), 0, 1, k).transpose();
                for (int c = 0; c < k; ++c) {
                    std::vector<double> col(alive.size());
                    for (std::size_t a = 0; a < alive.size(); ++a)
                        col[a] = rhs(static_cast<Eigen::Index>(a), c);
                    const SampleStats st = sample_stats(col);
                    sol.y0[c] = st.mean;
                    slice0_sd[c] = st.ci95_halfwidth;
                }
            }
            // Fitted values become the Y of this slice.
            for (std::size_t a = 0; a < alive.size(); ++a) {
                const std::size_t p = alive[a];
                y_cur.row(static_cast<Eigen::Index>(p)) =
                    phi.row(static_cast<Eigen::Index>(a)) * theta[isl];
            }
        }

        sol.iterations = sweep + 1;
        sol.residual = (sol.y0 - y0_prev).cwiseAbs().maxCoeff();
        y0_prev = sol.y0;
        theta_prev = theta;
        zeta_prev = zeta;
        have_prev = true;
        if (sweep > 0 && sol.residual < opts.tol) break;
    }
    sol.converged = sol.residual < opts.tol || opts.max_iter == 1;
    sol.ci95.resize(k);
    for (int c = 0; c < k; ++c) sol.ci95[c] = slice0_sd[c];

    double gmax = 0;
    for (std::size_t p = 0; p < ens.n_paths; ++p) gmax = std::max(gmax, terminal[p].norm());
    sol.capped_bias_bound = gmax * ens.capped_fraction();

    if (opts.store_solution) {
        sol.store.emplace();
        sol.store->y.resize(ens.n_paths);
        sol.store->z.resize(ens.n_paths);
        // Reconstruct per-path values from the fitted tables of the final
        // sweep (plus the terminal row).
        Eigen::RowVectorXd row(n_feat);
        for (std::size_t p = 0; p < ens.n_paths; ++p) {
            const std::size_t e = e_of[p];
            Mat ym(static_cast<Eigen::Index>(e + 1), k);
            Mat zm(static_cast<Eigen::Index>(e), k * d1);
            for (std::size_t isl = 0; isl < e; ++isl) {
                const Vec x = ens.store->states[p].row(static_cast<Eigen::Index>(isl)).transpose();
                eval_features(x, row);
                ym.row(static_cast<Eigen::Index>(isl)) = row * theta[isl];
                zm.row(static_cast<Eigen::Index>(isl)) = row * zeta[isl];
            }
            ym.row(static_cast<Eigen::Index>(e)) = terminal[p].transpose();
            sol.store->y[p] = std::move(ym);
            sol.store->z[p] = std::move(zm);
        }
    }
    return sol;
}

MBetaNorms mbeta_norm(const BsdeSolution& solution, const PathEnsemble& ens, double beta) {
    if (!solution.store) throw std::invalid_argument("mbeta_norm: solution carries no stored paths");
    if (!std::isfinite(beta)) throw std::invalid_argument("mbeta_norm: beta must be finite");
    std::vector<double> y_int(ens.n_paths, 0.0), z_int(ens.n_paths, 0.0);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const Mat& ym = solution.store->y[p];
        const Mat& zm = solution.store->z[p];
        const auto alive = zm.rows();
        for (Eigen::Index i = 0; i < alive; ++i) {
            const double t = static_cast<double>(i) * ens.h;
            double dt = ens.h;
            if (i == alive - 1 && !ens.paths[p].capped)
                dt = ens.paths[p].refined_exit_time - t;
            const double w = std::exp(2.0 * beta * t);
            y_int[p] += w * ym.row(i).squaredNorm() * dt;
            z_int[p] += w * zm.row(i).squaredNorm() * dt;
        }
    }
    MBetaNorms out;
    out.y_norm = std::sqrt(sample_stats(y_int).mean);
    out.z_norm = std::sqrt(sample_stats(z_int).mean);
    return out;
}

}  // namespace qdb
