#include <cmath>

#include "doctest.h"
#include "qdb/builtin.hpp"
#include "qdb/problem.hpp"

using namespace qdb;

TEST_CASE("tp1 hypotheses: (H2) margin -1, (H9) margin 1") {
    const BuiltinProblem tp1 = make_tp1();
    const auto grid = sample_interior_grid(tp1.dom, 9, false);
    const auto rep = validate_hypotheses(tp1.spec, tp1.dom, grid);
    // L psi = -2 everywhere, so the (H2) margin max(L psi + 1) is exactly -1.
    CHECK(rep.h2.pass);
    CHECK(rep.h2.margin == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(rep.h3.pass);
    // Identity diffusion: <a n, n> = 1 at every boundary point.
    CHECK(rep.h9.pass);
    CHECK(rep.h9.margin == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(rep.all_pass());
}

TEST_CASE("constant psi fails (H2) with margin +1") {
    BuiltinProblem tp1 = make_tp1();
    DomainSpec flat = tp1.dom;
    flat.psi = [](const Vec&) { return 1.0; };
    flat.psi_grad = [](const Vec&) { return Vec(Vec::Zero(2)); };
    flat.psi_hess = [](const Vec&) { return Mat(Mat::Zero(2, 2)); };
    const auto grid = sample_interior_grid(flat, 9, false);
    const auto rep = validate_hypotheses(tp1.spec, flat, grid);
    CHECK_FALSE(rep.h2.pass);
    CHECK(rep.h2.margin == doctest::Approx(1.0));
}

TEST_CASE("validate_hypotheses rejects empty or exterior grids") {
    const BuiltinProblem tp1 = make_tp1();
    CHECK_THROWS_AS(validate_hypotheses(tp1.spec, tp1.dom, {}), std::invalid_argument);
    Vec outside(2);
    outside << 2.0, 0.0;
    CHECK_THROWS_AS(validate_hypotheses(tp1.spec, tp1.dom, {outside}), std::invalid_argument);
}

TEST_CASE("check_h7 clauses") {
    // -0.5 + 0.18 = -0.32 < -0.2 < 0 and 2 vartheta = -0.91 = -1 + 0.09.
    CHECK(check_h7(0.5, 1.0, 0.3, -0.1, -0.455).pass);
    // mu = L violates the strict window.
    CHECK_FALSE(check_h7(1.0, 1.0, 0.3, -0.1, -0.955).pass);
    CHECK_FALSE(check_h7(1.0, 1.0, 0.3, -0.1, -0.955).mu_window);
    // beta = 0 violates 2 beta < 0.
    CHECK_FALSE(check_h7(0.5, 1.0, 0.3, 0.0, -0.455).pass);
    CHECK_FALSE(check_h7(0.5, 1.0, 0.3, 0.0, -0.455).beta_window);
    // Recomputing vartheta from the identity always satisfies the third clause.
    for (double mu : {0.2, 0.7, 1.3}) {
        for (double L0 : {0.0, 0.4}) {
            const double vt = 0.5 * (-2.0 * mu + L0 * L0);
            CHECK(check_h7(mu, mu + 1.0, L0, -0.05, vt).vartheta_consistent);
        }
    }
}

TEST_CASE("check_h10: constant coefficients reduce to beta <= -1/4") {
    // sigma, b constant, rho = Q = 0, M = 0, p = 1: LHS = 0 and the inequality
    // reads 0 <= -4 beta - 1.
    ProblemSpec s;
    s.d = 1;
    s.d1 = 1;
    s.k = 1;
    s.sigma = [](const Vec&) { return Mat(Mat::Identity(1, 1)); };
    s.sigma_dir = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
    s.b = [](const Vec&) { return Vec(Vec::Zero(1)); };
    s.b_dir = [](const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
    DomainSpec dm;
    dm.psi = [](const Vec& x) { return 1.0 - x[0] * x[0]; };
    dm.psi_grad = [](const Vec& x) { return Vec(-2.0 * x); };
    dm.psi_hess = [](const Vec&) { return Mat(-2.0 * Mat::Identity(1, 1)); };
    dm.box_lo = Vec::Constant(1, -1.0);
    dm.box_hi = Vec::Constant(1, 1.0);
    InteriorScheme sch;
    sch.rho = [](const Vec&) { return Vec(Vec::Zero(1)); };
    sch.M = [](const Vec&) { return 0.0; };
    sch.Q = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };

    std::vector<std::pair<Vec, Vec>> samples;
    Vec x(1), y(1);
    x << 0.3;
    y << 1.0;
    samples.emplace_back(x, y);
    CHECK(check_h10(s, dm, sch, 1.0, -0.3, samples).pass);       // beta <= -1/4
    CHECK_FALSE(check_h10(s, dm, sch, 1.0, -0.2, samples).pass); // beta > -1/4

    Vec bad(1);
    bad << 1.5;
    std::vector<std::pair<Vec, Vec>> bad_samples{{x, bad}};
    CHECK_THROWS_AS(check_h10(s, dm, sch, 1.0, -0.3, bad_samples), std::invalid_argument);
}

TEST_CASE("check_h10 agrees with the scalar reduction for the 1-d power family") {
    // sigma = x, b = b1 x, rho = Q = 0, M = 1, p = 1/2: the inequality reduces
    // to 2 beta + 2 + 2 b1 <= a(x) = x^2/2.
    const double b1 = 0.1;
    const BuiltinProblem fam = make_power_1d(1.0, b1, 1.0, 1.0, 2.0);
    InteriorScheme sch;
    sch.rho = [](const Vec&) { return Vec(Vec::Zero(1)); };
    sch.M = [](const Vec&) { return 1.0; };
    sch.Q = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
    for (double beta : {-0.9, -0.6, -0.2}) {
        for (double xv : {1.1, 1.5, 1.9}) {
            Vec x(1), y(1);
            x << xv;
            y << 1.0;
            const auto rep = check_h10(fam.spec, fam.dom, sch, 0.5, beta, {{x, y}});
            const bool scalar = 2.0 * beta + 2.0 + 2.0 * b1 <= 0.5 * xv * xv;
            CHECK(rep.pass == scalar);
        }
    }
}

TEST_CASE("tp1 interior controls satisfy (H10) for p in {1,2}") {
    const BuiltinProblem tp1 = make_tp1();
    std::vector<std::pair<Vec, Vec>> samples;
    for (const Vec& x : sample_interior_grid(tp1.dom, 9, false)) {
        Vec y(2);
        y << std::cos(x[0] + 1.0), std::sin(x[0] + 1.0);
        samples.emplace_back(x, y);
    }
    CHECK(check_h10(tp1.spec, tp1.dom, tp1.interior, 1.0, tp1.spec.beta, samples).pass);
    CHECK(check_h10(tp1.spec, tp1.dom, tp1.interior, 2.0, tp1.spec.beta, samples).pass);
}

TEST_CASE("derivative gate catches an inconsistent callback") {
    BuiltinProblem tp1 = make_tp1();
    ProblemSpec broken = tp1.spec;
    broken.g_dir = [](const Vec& x, const Vec& y) {
        Vec v(1);
        v[0] = 2 * x[0] * y[0] + 2 * x[1] * y[1];  // wrong sign on the second term
        return v;
    };
    Vec x(2);
    x << 0.3, 0.4;
    CHECK_THROWS_AS(validate_derivative_callbacks(broken, tp1.dom, {x}), std::runtime_error);
    CHECK_NOTHROW(validate_derivative_callbacks(tp1.spec, tp1.dom, {x}));
}

TEST_CASE("builtin factories expose consistent analytic data") {
    for (const char* name : {"tp1", "tp2", "tp3"}) {
        const BuiltinProblem p = make_builtin(name);
        CHECK(p.has_analytic);
        // The analytic u matches g on the boundary.
        const auto boundary = sample_level_set(p.dom, 0.0, 8);
        for (const Vec& y : boundary)
            CHECK((p.analytic.u(y) - p.spec.g(y)).norm() < 1e-9);
    }
    CHECK_THROWS_AS(make_builtin("nope"), std::invalid_argument);
}

TEST_CASE("tp2 analytic solution solves the Euler ODE") {
    const BuiltinProblem tp2 = make_tp2();
    // L u + f(x, u) = x^2/2 u'' + b1 x u' - c u = 0 pointwise.
    for (double xv : {1.1, 1.5, 1.9}) {
        Vec x(1), e(1);
        x << xv;
        e << 1.0;
        const double u = tp2.analytic.u(x)[0];
        const double du = tp2.analytic.u_dir(x, e)[0];
        const double ddu = tp2.analytic.u_dir2(x, e, e)[0];
        const double residual = 0.5 * xv * xv * ddu + 0.3 * xv * du - 1.0 * u;
        CHECK(std::abs(residual) < 1e-10);
    }
    // Frozen oracle values for u(1.5) and its derivatives.
    Vec x(1), e(1);
    x << 1.5;
    e << 1.0;
    CHECK(tp2.analytic.u(x)[0] == doctest::Approx(1.3914594772089776).epsilon(1e-12));
    CHECK(tp2.analytic.u_dir(x, e)[0] == doctest::Approx(1.0364036907485451).epsilon(1e-12));
    CHECK(tp2.analytic.u_dir2(x, e, e)[0] == doctest::Approx(0.8222913923307842).epsilon(1e-12));
}

TEST_CASE("tp3 manufactured field satisfies L u* + f = 0") {
    const BuiltinProblem tp3 = make_tp3();
    for (const Vec& x : sample_interior_grid(tp3.dom, 9, false)) {
        Vec e1 = Vec::Unit(2, 0), e2 = Vec::Unit(2, 1);
        const double lap = tp3.analytic.u_dir2(x, e1, e1)[0] + tp3.analytic.u_dir2(x, e2, e2)[0];
        const double lu = lap;  // a = I, b = 0
        const double residual = lu + tp3.spec.f(x, Vec::Zero(1), Mat::Zero(1, 2))[0];
        CHECK(std::abs(residual) < 1e-10);
    }
    Vec x(2);
    x << 0.3, 0.4;
    CHECK(tp3.analytic.u(x)[0] == doctest::Approx(0.1137990114448818).epsilon(1e-12));
}

TEST_CASE("a(x) stays positive semi-definite on accepted specs") {
    for (const char* name : {"tp1", "tp2", "tp3"}) {
        const BuiltinProblem p = make_builtin(name);
        for (const Vec& x : sample_interior_grid(p.dom, 9, false)) {
            const Eigen::SelfAdjointEigenSolver<Mat> es(p.spec.a(x));
            CHECK(es.eigenvalues().minCoeff() >= -1e-10);
        }
    }
}
