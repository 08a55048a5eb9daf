#include <cmath>
#include <cstdint>
#include <sstream>

#include "qdb/numeric.hpp"
#include "qdb/philox.hpp"
#include "qdb/problem.hpp"

namespace qdb {

namespace {

void cartesian_rec(const std::vector<std::vector<double>>& axes, std::size_t axis, Vec& point,
                   const std::function<void(const Vec&)>& emit) {
    if (axis == axes.size()) {
        emit(point);
        return;
    }
    for (double v : axes[axis]) {
        point[static_cast<Eigen::Index>(axis)] = v;
        cartesian_rec(axes, axis + 1, point, emit);
    }
}

Vec interior_anchor(const DomainSpec& dom) {
    const int d = static_cast<int>(dom.box_lo.size());
    Vec best;
    double best_psi = -std::numeric_limits<double>::infinity();
    const int res = 33;
    std::vector<std::vector<double>> axes(d);
    for (int i = 0; i < d; ++i) axes[i] = linspace(dom.box_lo[i], dom.box_hi[i], res);
    Vec point(d);
    cartesian_rec(axes, 0, point, [&](const Vec& x) {
        const double p = dom.psi(x);
        if (p > best_psi) {
            best_psi = p;
            best = x;
        }
    });
    if (!(best_psi > 0))
        throw std::runtime_error("interior_anchor: no interior point found in the bounding box");
    return best;
}

std::vector<Vec> unit_directions(int d, int n) {
    std::vector<Vec> dirs;
    dirs.reserve(static_cast<std::size_t>(n));
    if (d == 1) {
        Vec plus(1), minus(1);
        plus[0] = 1.0;
        minus[0] = -1.0;
        dirs.push_back(plus);
        if (n > 1) dirs.push_back(minus);
        return dirs;
    }
    if (d == 2) {
        for (int i = 0; i < n; ++i) {
            const double theta = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
            Vec v(2);
            v << std::cos(theta), std::sin(theta);
            dirs.push_back(v);
        }
        return dirs;
    }
    const CounterRng rng(0x5eedu, RngStream::Sampling);
    for (int i = 0; i < n; ++i) {
        Vec v(d);
        for (int j = 0; j < d; ++j) v[j] = rng.normal(static_cast<std::uint64_t>(i), 0, j);
        const double nv = v.norm();
        dirs.push_back(nv > 0 ? Vec(v / nv) : Vec(Vec::Unit(d, 0)));
    }
    return dirs;
}

}  // namespace

std::vector<Vec> sample_interior_grid(const DomainSpec& dom, int resolution,
                                      bool include_boundary) {
    if (resolution < 2) throw std::invalid_argument("sample_interior_grid: resolution too small");
    const int d = static_cast<int>(dom.box_lo.size());
    std::vector<std::vector<double>> axes(d);
    for (int i = 0; i < d; ++i) axes[i] = linspace(dom.box_lo[i], dom.box_hi[i], resolution);
    std::vector<Vec> out;
    Vec point(d);
    cartesian_rec(axes, 0, point, [&](const Vec& x) {
        const double p = dom.psi(x);
        if (include_boundary ? (p >= 0.0) : (p > 0.0)) out.push_back(x);
    });
    return out;
}

std::vector<Vec> sample_level_set(const DomainSpec& dom, double level, int n, double tol) {
    const Vec anchor = interior_anchor(dom);
    const double psi_anchor = dom.psi(anchor);
    if (!(psi_anchor > level))
        throw std::invalid_argument("sample_level_set: level above the sampled psi maximum");
    const int d = static_cast<int>(dom.box_lo.size());
    const double diag = (dom.box_hi - dom.box_lo).norm();
    std::vector<Vec> points;
    for (const Vec& dir : unit_directions(d, n)) {
        // bracket psi = level along anchor + t dir
        double t_lo = 0.0, t_hi = diag;
        double psi_hi = dom.psi(anchor + t_hi * dir);
        bool ok = psi_hi < level;
        if (!ok) {
            for (int grow = 0; grow < 8 && !ok; ++grow) {
                t_hi *= 2.0;
                psi_hi = dom.psi(anchor + t_hi * dir);
                ok = psi_hi < level;
            }
        }
        if (!ok) continue;
        // Bisect down to tol (or machine precision for tol = 0) and keep the
        // inside endpoint, so the returned point satisfies psi >= level even
        // for levels near the floating-point floor (the ordering calibration
        // reaches lambda^2 values around 1e-14).
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (t_lo + t_hi);
            if (mid <= t_lo || mid >= t_hi || (t_hi - t_lo) <= tol) break;
            if (dom.psi(anchor + mid * dir) > level)
                t_lo = mid;
            else
                t_hi = mid;
        }
        points.push_back(anchor + t_lo * dir);
    }
    if (points.empty()) throw std::runtime_error("sample_level_set: no crossings found");
    return points;
}

double psi_sup_estimate(const DomainSpec& dom, int resolution) {
    double sup = 0.0;
    for (const Vec& x : sample_interior_grid(dom, resolution, false))
        sup = std::max(sup, dom.psi(x));
    return sup;
}

namespace {

// Enumerate up to `budget` index pairs (i < j) over n points; all pairs when
// they fit, otherwise a seeded uniform subsample.
template <class F>
void for_pairs(std::size_t n, std::size_t budget, std::uint64_t seed, F&& fn) {
    if (n < 2) return;
    const std::size_t total = n * (n - 1) / 2;
    if (total <= budget) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) fn(i, j);
        return;
    }
    const CounterRng rng(seed, RngStream::Sampling);
    for (std::size_t s = 0; s < budget; ++s) {
        const double u1 = rng.uniform(s, 0, 0);
        const double u2 = rng.uniform(s, 0, 1);
        auto i = static_cast<std::size_t>(u1 * static_cast<double>(n));
        auto j = static_cast<std::size_t>(u2 * static_cast<double>(n));
        i = std::min(i, n - 1);
        j = std::min(j, n - 1);
        if (i == j) continue;
        fn(i, j);
    }
}

}  // namespace

NormReport compute_norms(const ProblemSpec& spec, const DomainSpec& dom,
                         const NormConfig& config) {
    if (config.resolution < 8)
        throw std::invalid_argument("compute_norms: resolution must be at least 8 per axis");
    const auto grid = sample_interior_grid(dom, config.resolution, true);
    if (grid.empty()) throw std::runtime_error("compute_norms: empty grid");

    NormReport report;
    report.grid_resolution = config.resolution;

    const int d = spec.d, d1 = spec.d1, k = spec.k;
    std::vector<Vec> basis;
    for (int i = 0; i < d; ++i) basis.push_back(Vec::Unit(d, i));

    auto check_finite = [&](double v, const char* what, const Vec& x) {
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "compute_norms: non-finite value from " << what << " at (";
            for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
            os << ")";
            throw std::runtime_error(os.str());
        }
    };

    // g values and Jacobians on the grid.
    std::vector<Vec> g_vals(grid.size());
    std::vector<Mat> g_jacs(grid.size());
    double g0 = 0, gx = 0, gxx = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec& x = grid[i];
        g_vals[i] = spec.g(x);
        check_finite(g_vals[i].norm(), "g", x);
        Mat jac(k, d);
        for (int l = 0; l < d; ++l) jac.col(l) = spec.g_dir(x, basis[l]);
        g_jacs[i] = jac;
        double hess_sq = 0.0;
        for (int l = 0; l < d; ++l)
            for (int m = 0; m < d; ++m) hess_sq += spec.g_dir2(x, basis[l], basis[m]).squaredNorm();
        g0 = std::max(g0, g_vals[i].norm());
        gx = std::max(gx, jac.norm());
        gxx = std::max(gxx, std::sqrt(hess_sq));
    }
    report.g0 = g0;
    report.g1 = g0 + gx;
    report.g2 = report.g1 + gxx;

    double g_lip0 = 0, g_lip1 = 0;
    for_pairs(grid.size(), config.pair_budget, config.seed, [&](std::size_t i, std::size_t j) {
        const double dist = (grid[i] - grid[j]).norm();
        if (dist < 1e-12) return;
        g_lip0 = std::max(g_lip0, (g_vals[i] - g_vals[j]).norm() / dist);
        g_lip1 = std::max(g_lip1, (g_jacs[i] - g_jacs[j]).norm() / dist);
    });
    report.g_lip0 = g_lip0;
    report.g_lip1 = g_lip1;
    report.g01 = report.g0 + g_lip0;
    report.g11 = report.g1 + g_lip1;

    // f at (.,0,0) and the x-Lipschitz seminorm over the (y,z) box.
    const Vec y_zero = Vec::Zero(k);
    const Mat z_zero = Mat::Zero(k, d1);
    std::vector<Vec> f0_vals(grid.size());
    double f00 = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        f0_vals[i] = spec.f(grid[i], y_zero, z_zero);
        check_finite(f0_vals[i].norm(), "f", grid[i]);
        f00 = std::max(f00, f0_vals[i].norm());
    }
    report.f00 = f00;

    const CounterRng yz_rng(config.seed ^ 0x9e3779b97f4a7c15ull, RngStream::Sampling);
    std::vector<std::pair<Vec, Mat>> yz_samples;
    yz_samples.emplace_back(y_zero, z_zero);
    for (int s = 1; s < config.yz_samples; ++s) {
        Vec y(k);
        Mat z(k, d1);
        std::uint32_t idx = 0;
        for (int i = 0; i < k; ++i)
            y[i] = (2.0 * yz_rng.uniform(s, 1, idx++) - 1.0) * config.yz_box_halfwidth;
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < d1; ++j)
                z(i, j) = (2.0 * yz_rng.uniform(s, 1, idx++) - 1.0) * config.yz_box_halfwidth;
        yz_samples.emplace_back(std::move(y), std::move(z));
    }

    double f_lip_x = 0;
    const std::size_t pair_budget_f = std::max<std::size_t>(1, config.pair_budget / yz_samples.size());
    for_pairs(grid.size(), pair_budget_f, config.seed + 1, [&](std::size_t i, std::size_t j) {
        const double dist = (grid[i] - grid[j]).norm();
        if (dist < 1e-12) return;
        for (const auto& [y, z] : yz_samples) {
            const double diff = (spec.f(grid[i], y, z) - spec.f(grid[j], y, z)).norm();
            f_lip_x = std::max(f_lip_x, diff / dist);
        }
    });
    report.f_lip_x = f_lip_x;
    report.f01 = f00 + f_lip_x;

    // [f]_{1,1}: Lipschitz seminorm of the full Jacobian over (x, y, z) pairs.
    std::vector<Mat> jacs;
    std::vector<std::size_t> jac_x_idx, jac_yz_idx;
    const std::size_t stride = std::max<std::size_t>(1, grid.size() / 64);
    for (std::size_t i = 0; i < grid.size(); i += stride) {
        for (std::size_t s = 0; s < yz_samples.size(); ++s) {
            jacs.push_back(spec.f_jac(grid[i], yz_samples[s].first, yz_samples[s].second));
            jac_x_idx.push_back(i);
            jac_yz_idx.push_back(s);
        }
    }
    double f11 = 0;
    for_pairs(jacs.size(), config.pair_budget, config.seed + 2, [&](std::size_t i, std::size_t j) {
        const Vec& xi = grid[jac_x_idx[i]];
        const Vec& xj = grid[jac_x_idx[j]];
        const auto& [yi, zi] = yz_samples[jac_yz_idx[i]];
        const auto& [yj, zj] = yz_samples[jac_yz_idx[j]];
        const double dist = std::sqrt((xi - xj).squaredNorm() + (yi - yj).squaredNorm() +
                                      (zi - zj).squaredNorm());
        if (dist < 1e-12) return;
        f11 = std::max(f11, (jacs[i] - jacs[j]).norm() / dist);
    });
    report.f11 = f11;

    return report;
}

}  // namespace qdb
