#include "qdb/builtin.hpp"

#include <cmath>

#include "qdb/numeric.hpp"

namespace qdb {

namespace {

Vec scalar_vec(double v) {
    Vec out(1);
    out[0] = v;
    return out;
}

void run_load_gate(const BuiltinProblem& p) {
    // Finite-difference cross-validation of every derivative callback at a
    // few interior points.
    std::vector<Vec> pts;
    const Vec mid = 0.5 * (p.dom.box_lo + p.dom.box_hi);
    for (double t : {0.05, 0.35, 0.65}) {
        const Vec x = p.dom.box_lo + t * (p.dom.box_hi - p.dom.box_lo);
        if (p.dom.contains(x)) pts.push_back(x);
    }
    if (p.dom.contains(mid)) pts.push_back(mid);
    if (pts.empty()) throw std::runtime_error("builtin problem: no interior validation points");
    validate_derivative_callbacks(p.spec, p.dom, pts);
}

}  // namespace

BuiltinProblem make_tp1() {
    BuiltinProblem p;
    p.name = "tp1";
    ProblemSpec& s = p.spec;
    s.d = 2;
    s.d1 = 2;
    s.k = 1;
    const double sqrt2 = std::sqrt(2.0);
    s.sigma = [sqrt2](const Vec&) { return Mat(sqrt2 * Mat::Identity(2, 2)); };
    s.sigma_dir = [](const Vec&, const Vec&) { return Mat(Mat::Zero(2, 2)); };
    s.sigma_dir2 = [](const Vec&, const Vec&, const Vec&) { return Mat(Mat::Zero(2, 2)); };
    s.b = [](const Vec&) { return Vec(Vec::Zero(2)); };
    s.b_dir = [](const Vec&, const Vec&) { return Vec(Vec::Zero(2)); };
    s.b_dir2 = [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(2)); };
    s.f = [](const Vec&, const Vec&, const Mat&) { return Vec(Vec::Zero(1)); };
    s.f_jac = [](const Vec&, const Vec&, const Mat&) { return Mat(Mat::Zero(1, 5)); };
    s.g = [](const Vec& x) { return scalar_vec(x[0] * x[0] - x[1] * x[1]); };
    s.g_dir = [](const Vec& x, const Vec& y) { return scalar_vec(2 * x[0] * y[0] - 2 * x[1] * y[1]); };
    s.g_dir2 = [](const Vec&, const Vec& y, const Vec& z) {
        return scalar_vec(2 * y[0] * z[0] - 2 * y[1] * z[1]);
    };
    s.mu = 0.0;
    s.L = 0.0;
    s.L0 = 0.0;
    s.beta = -0.3;
    s.vartheta = 0.0;
    s.K0 = 8.0;

    DomainSpec& dm = p.dom;
    dm.psi = [](const Vec& x) { return 0.5 * (1.0 - x.squaredNorm()); };
    dm.psi_grad = [](const Vec& x) { return Vec(-x); };
    dm.psi_hess = [](const Vec&) { return Mat(-Mat::Identity(2, 2)); };
    dm.lambda = 0.3;
    dm.delta1 = 0.01;
    dm.box_lo = Vec::Constant(2, -1.0);
    dm.box_hi = Vec::Constant(2, 1.0);

    p.interior.rho = [](const Vec&) { return Vec(Vec::Zero(2)); };
    p.interior.M = [](const Vec&) { return 1.0; };
    p.interior.Q = [](const Vec&, const Vec&) { return Mat(Mat::Zero(2, 2)); };

    // Harmonic boundary data: u is g itself.
    p.analytic.u = s.g;
    p.analytic.u_dir = s.g_dir;
    p.analytic.u_dir2 = s.g_dir2;
    p.analytic.expected_exit_time = [](const Vec& x) { return 0.25 * (1.0 - x.squaredNorm()); };
    p.has_analytic = true;
    p.has_exit_time_formula = true;
    p.driver_free_legal = true;

    run_load_gate(p);
    return p;
}

BuiltinProblem make_power_1d(double sigma1, double b1, double c, double x_lo, double x_hi) {
    if (!(0 < x_lo && x_lo < x_hi))
        throw std::invalid_argument("make_power_1d: need 0 < x_lo < x_hi");
    BuiltinProblem p;
    p.name = "power_1d";
    ProblemSpec& s = p.spec;
    s.d = 1;
    s.d1 = 1;
    s.k = 1;
    s.sigma = [sigma1](const Vec& x) { return Mat(sigma1 * x[0] * Mat::Identity(1, 1)); };
    s.sigma_dir = [sigma1](const Vec&, const Vec& y) { return Mat(sigma1 * y[0] * Mat::Identity(1, 1)); };
    s.sigma_dir2 = [](const Vec&, const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
    s.b = [b1](const Vec& x) { return scalar_vec(b1 * x[0]); };
    s.b_dir = [b1](const Vec&, const Vec& y) { return scalar_vec(b1 * y[0]); };
    s.b_dir2 = [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
    s.f = [c](const Vec&, const Vec& y, const Mat&) { return Vec(-c * y); };
    s.f_jac = [c](const Vec&, const Vec&, const Mat&) {
        Mat j = Mat::Zero(1, 3);
        j(0, 1) = -c;
        return j;
    };
    s.g = [](const Vec& x) { return scalar_vec(x[0]); };
    s.g_dir = [](const Vec&, const Vec& y) { return scalar_vec(y[0]); };
    s.g_dir2 = [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };

    s.mu = c;
    s.L = c + 0.5;
    s.L0 = 0.0;
    s.beta = -0.25 * c;
    s.vartheta = -c;
    // Generous C^2 bound over [x_lo, x_hi]; psi constants are filled below.
    // The K0 value is finalized after c0 is known.

    // psi = c0 (x - lo)(hi - x), with c0 making L psi <= -1 and |psi'| >= 1
    // at the endpoints.
    double q_max = -std::numeric_limits<double>::infinity();
    for (double x : linspace(x_lo, x_hi, 513)) {
        const double q = -sigma1 * sigma1 * x * x + b1 * x * (x_lo + x_hi - 2.0 * x);
        q_max = std::max(q_max, q);
    }
    if (!(q_max < 0))
        throw std::invalid_argument("make_power_1d: parameters violate L psi <= -1 (drift too strong)");
    const double c0 = 1.02 * std::max(1.0 / (x_hi - x_lo), 1.0 / (-q_max));

    DomainSpec& dm = p.dom;
    dm.psi = [c0, x_lo, x_hi](const Vec& x) { return c0 * (x[0] - x_lo) * (x_hi - x[0]); };
    dm.psi_grad = [c0, x_lo, x_hi](const Vec& x) {
        return scalar_vec(c0 * (x_lo + x_hi - 2.0 * x[0]));
    };
    dm.psi_hess = [c0](const Vec&) { return Mat(-2.0 * c0 * Mat::Identity(1, 1)); };
    dm.lambda = 0.2;
    dm.delta1 = 0.005;
    dm.box_lo = scalar_vec(x_lo);
    dm.box_hi = scalar_vec(x_hi);
    const double psi_sup = c0 * 0.25 * (x_hi - x_lo) * (x_hi - x_lo);
    if (dm.lambda >= psi_sup) {
        dm.lambda = 0.5 * psi_sup;
        dm.delta1 = 0.1 * dm.lambda * dm.lambda;
    }

    s.K0 = (sigma1 * x_hi + sigma1) + (std::abs(b1) * x_hi + std::abs(b1)) + psi_sup +
           c0 * (x_hi - x_lo) + 2.0 * c0 + 1.0;

    // Interior controls: rho = Q = 0 and a constant M sized from the (H10)_2
    // inequality at the slowest point of the region.
    const double m_need =
        (2.0 * 2.0 * 7.0 * sigma1 * sigma1 + 8.0 * b1 + 8.0 * s.beta + 1.0) /
        (2.0 * 0.5 * sigma1 * sigma1 * x_lo * x_lo);
    const double m_const = std::max(1.0, 1.25 * m_need);
    p.interior.rho = [](const Vec&) { return Vec(Vec::Zero(1)); };
    p.interior.M = [m_const](const Vec&) { return m_const; };
    p.interior.Q = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };

    // u = A x^alpha1 + B x^alpha2 with (sigma1^2/2) a(a-1) + b1 a - c = 0.
    const double qa = 0.5 * sigma1 * sigma1;
    const double qb = b1 - 0.5 * sigma1 * sigma1;
    const double disc = qb * qb + 4.0 * qa * c;
    const double alpha1 = (-qb + std::sqrt(disc)) / (2.0 * qa);
    const double alpha2 = (-qb - std::sqrt(disc)) / (2.0 * qa);
    // Boundary data g(x) = x at both endpoints.
    const double det = std::pow(x_lo, alpha1) * std::pow(x_hi, alpha2) -
                       std::pow(x_hi, alpha1) * std::pow(x_lo, alpha2);
    const double coef_a = (x_lo * std::pow(x_hi, alpha2) - x_hi * std::pow(x_lo, alpha2)) / det;
    const double coef_b = (x_hi * std::pow(x_lo, alpha1) - x_lo * std::pow(x_hi, alpha1)) / det;
    p.analytic.u = [=](const Vec& x) {
        return scalar_vec(coef_a * std::pow(x[0], alpha1) + coef_b * std::pow(x[0], alpha2));
    };
    p.analytic.u_dir = [=](const Vec& x, const Vec& y) {
        return scalar_vec((coef_a * alpha1 * std::pow(x[0], alpha1 - 1) +
                           coef_b * alpha2 * std::pow(x[0], alpha2 - 1)) *
                          y[0]);
    };
    p.analytic.u_dir2 = [=](const Vec& x, const Vec& y, const Vec& z) {
        return scalar_vec((coef_a * alpha1 * (alpha1 - 1) * std::pow(x[0], alpha1 - 2) +
                           coef_b * alpha2 * (alpha2 - 1) * std::pow(x[0], alpha2 - 2)) *
                          y[0] * z[0]);
    };
    p.has_analytic = true;
    p.has_exit_time_formula = false;
    p.driver_free_legal = false;

    run_load_gate(p);
    return p;
}

BuiltinProblem make_tp2(double b1, double c) {
    BuiltinProblem p = make_power_1d(1.0, b1, c, 1.0, 2.0);
    p.name = "tp2";
    return p;
}

BuiltinProblem make_tp3() {
    BuiltinProblem p;
    p.name = "tp3";
    ProblemSpec& s = p.spec;
    s.d = 2;
    s.d1 = 2;
    s.k = 1;
    const double sqrt2 = std::sqrt(2.0);
    s.sigma = [sqrt2](const Vec&) { return Mat(sqrt2 * Mat::Identity(2, 2)); };
    s.sigma_dir = [](const Vec&, const Vec&) { return Mat(Mat::Zero(2, 2)); };
    s.sigma_dir2 = [](const Vec&, const Vec&, const Vec&) { return Mat(Mat::Zero(2, 2)); };
    s.b = [](const Vec&) { return Vec(Vec::Zero(2)); };
    s.b_dir = [](const Vec&, const Vec&) { return Vec(Vec::Zero(2)); };
    s.b_dir2 = [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(2)); };

    // Manufactured solution u* = S T with S = sin(x1) sinh(x2) and
    // T = 1 - |x|^2/4, so f := -L u* = -Delta u* = <x, grad S> + S.
    struct Parts {
        double S, Sx1, Sx2, Sx1x1, Sx1x2, Sx2x2, T, Tx1, Tx2;
    };
    auto parts = [](const Vec& x) {
        Parts q;
        const double s1 = std::sin(x[0]), c1 = std::cos(x[0]);
        const double sh = std::sinh(x[1]), ch = std::cosh(x[1]);
        q.S = s1 * sh;
        q.Sx1 = c1 * sh;
        q.Sx2 = s1 * ch;
        q.Sx1x1 = -s1 * sh;
        q.Sx1x2 = c1 * ch;
        q.Sx2x2 = s1 * sh;
        q.T = 1.0 - 0.25 * x.squaredNorm();
        q.Tx1 = -0.5 * x[0];
        q.Tx2 = -0.5 * x[1];
        return q;
    };
    auto ustar = [parts](const Vec& x) {
        const Parts q = parts(x);
        return scalar_vec(q.S * q.T);
    };
    auto ustar_grad = [parts](const Vec& x) {
        const Parts q = parts(x);
        Vec gr(2);
        gr[0] = q.Sx1 * q.T + q.S * q.Tx1;
        gr[1] = q.Sx2 * q.T + q.S * q.Tx2;
        return gr;
    };
    auto ustar_hess = [parts](const Vec& x) {
        const Parts q = parts(x);
        Mat h(2, 2);
        h(0, 0) = q.Sx1x1 * q.T + 2.0 * q.Sx1 * q.Tx1 - 0.5 * q.S;
        h(1, 1) = q.Sx2x2 * q.T + 2.0 * q.Sx2 * q.Tx2 - 0.5 * q.S;
        h(0, 1) = q.Sx1x2 * q.T + q.Sx1 * q.Tx2 + q.Sx2 * q.Tx1;
        h(1, 0) = h(0, 1);
        return h;
    };

    s.f = [parts](const Vec& x, const Vec&, const Mat&) {
        const Parts q = parts(x);
        return scalar_vec(x[0] * q.Sx1 + x[1] * q.Sx2 + q.S);
    };
    s.f_jac = [parts](const Vec& x, const Vec&, const Mat&) {
        const Parts q = parts(x);
        Mat j = Mat::Zero(1, 5);
        j(0, 0) = 2.0 * q.Sx1 + x[0] * q.Sx1x1 + x[1] * q.Sx1x2;
        j(0, 1) = 2.0 * q.Sx2 + x[0] * q.Sx1x2 + x[1] * q.Sx2x2;
        return j;
    };
    s.g = ustar;
    s.g_dir = [ustar_grad](const Vec& x, const Vec& y) { return scalar_vec(ustar_grad(x).dot(y)); };
    s.g_dir2 = [ustar_hess](const Vec& x, const Vec& y, const Vec& z) {
        return scalar_vec(y.dot(ustar_hess(x) * z));
    };
    s.mu = 0.0;
    s.L = 0.0;
    s.L0 = 0.0;
    s.beta = -0.3;
    s.vartheta = 0.0;
    s.K0 = 16.0;

    DomainSpec& dm = p.dom;
    dm.psi = [](const Vec& x) { return 0.5 * (1.0 - x.squaredNorm()); };
    dm.psi_grad = [](const Vec& x) { return Vec(-x); };
    dm.psi_hess = [](const Vec&) { return Mat(-Mat::Identity(2, 2)); };
    dm.lambda = 0.3;
    dm.delta1 = 0.01;
    dm.box_lo = Vec::Constant(2, -1.0);
    dm.box_hi = Vec::Constant(2, 1.0);

    p.interior.rho = [](const Vec&) { return Vec(Vec::Zero(2)); };
    p.interior.M = [](const Vec&) { return 1.0; };
    p.interior.Q = [](const Vec&, const Vec&) { return Mat(Mat::Zero(2, 2)); };

    p.analytic.u = ustar;
    p.analytic.u_dir = s.g_dir;
    p.analytic.u_dir2 = s.g_dir2;
    p.has_analytic = true;
    p.has_exit_time_formula = false;
    p.driver_free_legal = true;

    run_load_gate(p);
    return p;
}

BuiltinProblem make_builtin(const std::string& name) {
    if (name == "tp1") return make_tp1();
    if (name == "tp2") return make_tp2();
    if (name == "tp3") return make_tp3();
    throw std::invalid_argument("unknown builtin problem: " + name);
}

}  // namespace qdb
