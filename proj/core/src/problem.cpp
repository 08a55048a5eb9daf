#include "qdb/problem.hpp"

#include <cmath>
#include <sstream>

namespace qdb {

namespace {

std::string point_str(const Vec& x) {
    std::ostringstream os;
    os << "(";
    for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
    os << ")";
    return os.str();
}

void require_close(const Mat& fd, const Mat& exact, double rel_tol, const char* name,
                   const Vec& x) {
    const double scale = std::max({1.0, exact.norm(), fd.norm()});
    const double err = (fd - exact).norm() / scale;
    if (!(err <= rel_tol)) {
        std::ostringstream os;
        os << "derivative callback '" << name << "' disagrees with central finite differences at "
           << point_str(x) << " (relative error " << err << ", tolerance " << rel_tol << ")";
        throw std::runtime_error(os.str());
    }
}

std::vector<Vec> direction_panel(int d) {
    std::vector<Vec> dirs;
    for (int i = 0; i < d; ++i) {
        Vec e = Vec::Zero(d);
        e[i] = 1.0;
        dirs.push_back(e);
    }
    if (d > 1) {
        Vec m = Vec::Ones(d);
        m[0] = 0.5;
        dirs.push_back(m / m.norm());
    }
    return dirs;
}

}  // namespace

void validate_derivative_callbacks(const ProblemSpec& spec, const DomainSpec& dom,
                                   const std::vector<Vec>& points, double rel_tol) {
    if (points.empty()) throw std::invalid_argument("validate_derivative_callbacks: empty point set");
    const auto dirs = direction_panel(spec.d);
    const Vec y_probe = 0.3 * Vec::Ones(spec.k);
    const Mat z_probe = 0.2 * Mat::Ones(spec.k, spec.d1);

    for (const Vec& x : points) {
        const double eps = 1e-5 * std::max(1.0, x.cwiseAbs().maxCoeff());
        for (const Vec& y : dirs) {
            const Vec xp = x + eps * y;
            const Vec xm = x - eps * y;

            require_close((spec.sigma(xp) - spec.sigma(xm)) / (2 * eps), spec.sigma_dir(x, y),
                          rel_tol, "sigma_dir", x);
            require_close((spec.b(xp) - spec.b(xm)) / (2 * eps), spec.b_dir(x, y), rel_tol,
                          "b_dir", x);
            require_close((spec.g(xp) - spec.g(xm)) / (2 * eps), spec.g_dir(x, y), rel_tol,
                          "g_dir", x);
            Mat fd_psi(1, 1), cb_psi(1, 1);
            fd_psi(0, 0) = (dom.psi(xp) - dom.psi(xm)) / (2 * eps);
            cb_psi(0, 0) = dom.psi_grad(x).dot(y);
            require_close(fd_psi, cb_psi, rel_tol, "psi_grad", x);

            for (const Vec& z : dirs) {
                const Vec xpz = x + eps * z;
                const Vec xmz = x - eps * z;
                require_close((spec.sigma_dir(xpz, y) - spec.sigma_dir(xmz, y)) / (2 * eps),
                              spec.sigma_dir2(x, y, z), rel_tol, "sigma_dir2", x);
                require_close((spec.b_dir(xpz, y) - spec.b_dir(xmz, y)) / (2 * eps),
                              spec.b_dir2(x, y, z), rel_tol, "b_dir2", x);
                require_close((spec.g_dir(xpz, y) - spec.g_dir(xmz, y)) / (2 * eps),
                              spec.g_dir2(x, y, z), rel_tol, "g_dir2", x);
                Mat fd_h(1, 1), cb_h(1, 1);
                fd_h(0, 0) = (dom.psi_grad(xpz).dot(y) - dom.psi_grad(xmz).dot(y)) / (2 * eps);
                cb_h(0, 0) = y.dot(dom.psi_hess(x) * z);
                require_close(fd_h, cb_h, rel_tol, "psi_hess", x);
            }
        }

        // f Jacobian blocks against coordinate differences.
        const Mat jac = spec.f_jac(x, y_probe, z_probe);
        if (jac.rows() != spec.k || jac.cols() != spec.d + spec.k + spec.k * spec.d1)
            throw std::runtime_error("f_jac has wrong shape");
        Mat fd_jac(spec.k, jac.cols());
        for (int j = 0; j < spec.d; ++j) {
            Vec xp = x, xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            fd_jac.col(j) = (spec.f(xp, y_probe, z_probe) - spec.f(xm, y_probe, z_probe)) / (2 * eps);
        }
        for (int j = 0; j < spec.k; ++j) {
            Vec yp = y_probe, ym = y_probe;
            yp[j] += eps;
            ym[j] -= eps;
            fd_jac.col(spec.d + j) = (spec.f(x, yp, z_probe) - spec.f(x, ym, z_probe)) / (2 * eps);
        }
        for (int m = 0; m < spec.k; ++m) {
            for (int j = 0; j < spec.d1; ++j) {
                Mat zp = z_probe, zm = z_probe;
                zp(m, j) += eps;
                zm(m, j) -= eps;
                fd_jac.col(spec.d + spec.k + m * spec.d1 + j) =
                    (spec.f(x, y_probe, zp) - spec.f(x, y_probe, zm)) / (2 * eps);
            }
        }
        require_close(fd_jac, jac, rel_tol, "f_jac", x);
    }
}

}  // namespace qdb
