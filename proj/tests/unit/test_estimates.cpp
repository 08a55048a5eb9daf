#include <cmath>

#include "doctest.h"
#include "qdb/builtin.hpp"
#include "qdb/estimates.hpp"

using namespace qdb;

TEST_CASE("bound shapes: frozen arithmetic and degenerate directions") {
    const BuiltinProblem tp1 = make_tp1();
    Vec x(2), e1(2);
    x << 0.5, 0.0;
    e1 << 1.0, 0.0;
    // shape = 1 + 0.5 / 0.375^{3/4}
    CHECK(bound_shape(1, tp1.dom, x, e1) == doctest::Approx(2.0433897200488582).epsilon(1e-13));
    NormReport norms;
    norms.g01 = 3.0;
    norms.f01 = 0.0;
    CHECK(bound_rhs(1, tp1.dom, norms, x, e1, 1.0) ==
          doctest::Approx(6.1301691601465746).epsilon(1e-13));

    // xi0 = 0 annihilates both orders.
    CHECK(bound_shape(1, tp1.dom, x, Vec(Vec::Zero(2))) == 0.0);
    CHECK(bound_shape(2, tp1.dom, x, Vec(Vec::Zero(2))) == 0.0);

    // Tangential direction: no boundary blow-up, shape = |xi0|.
    Vec e2(2);
    e2 << 0.0, 1.0;  // psi_grad = -x is parallel to e1 here
    CHECK(bound_shape(1, tp1.dom, x, e2) == doctest::Approx(1.0));

    // Scale covariance: linear in order 1, quadratic in order 2.
    CHECK(bound_shape(1, tp1.dom, x, Vec(3.0 * e1)) ==
          doctest::Approx(3.0 * bound_shape(1, tp1.dom, x, e1)).epsilon(1e-13));
    CHECK(bound_shape(2, tp1.dom, x, Vec(3.0 * e1)) ==
          doctest::Approx(9.0 * bound_shape(2, tp1.dom, x, e1)).epsilon(1e-13));

    Vec outside(2);
    outside << 1.5, 0.0;
    CHECK_THROWS_AS(bound_shape(1, tp1.dom, outside, e1), std::domain_error);
}

TEST_CASE("order-1 shape is nonincreasing in psi along fixed-direction rays") {
    const BuiltinProblem tp1 = make_tp1();
    Vec e1(2);
    e1 << 1.0, 0.0;
    double prev = 0.0;
    for (double r : {0.3, 0.5, 0.7, 0.9, 0.99}) {
        Vec x(2);
        x << r, 0.0;
        // |psi_(e1)| = r grows toward the boundary while psi shrinks, so the
        // shape increases with r, i.e. decreases in psi.
        const double s = bound_shape(1, tp1.dom, x, e1);
        CHECK(s > prev);
        prev = s;
    }
}

TEST_CASE("verify_bounds on the disk with analytic derivatives") {
    const BuiltinProblem tp1 = make_tp1();
    NormConfig ncfg;
    ncfg.resolution = 33;
    const NormReport norms = compute_norms(tp1.spec, tp1.dom, ncfg);

    // Panel approaching the boundary along mixed directions.
    std::vector<Vec> panel, dirs;
    for (int i = 0; i < 30; ++i) {
        const double frac = static_cast<double>(i) / 29.0;
        const double r = 0.1 + 0.88 * frac;
        const double th = 0.35 * i;
        Vec x(2);
        x << r * std::cos(th), r * std::sin(th);
        panel.push_back(x);
        Vec xi(2);
        xi << 1.0, 0.0;
        dirs.push_back(xi);
    }
    VerifyBoundsOptions opts;
    opts.source = DerivativeSource::Analytic;
    opts.calibration_fraction = 0.5;
    const BoundReport rep = verify_bounds(1, tp1, norms, panel, dirs, opts);
    CHECK(rep.pass);
    CHECK(rep.n_calibrated > 0.0);
    CHECK(rep.holdout_max_ratio <= 1.1 * rep.n_calibrated);
    CHECK(rep.calibration_indices.size() + rep.holdout_indices.size() == panel.size());

    const BoundReport rep2 = verify_bounds(2, tp1, norms, panel, dirs, opts);
    CHECK(rep2.pass);
}

TEST_CASE("constant solutions calibrate N = 0 and trivially pass") {
    BuiltinProblem p = make_tp1();
    p.spec.g = [](const Vec&) { return Vec(Vec::Ones(1)); };
    p.spec.g_dir = [](const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
    p.spec.g_dir2 = [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
    p.analytic.u = p.spec.g;
    p.analytic.u_dir = p.spec.g_dir;
    p.analytic.u_dir2 = p.spec.g_dir2;
    NormConfig ncfg;
    ncfg.resolution = 17;
    const NormReport norms = compute_norms(p.spec, p.dom, ncfg);
    std::vector<Vec> panel, dirs;
    for (int i = 0; i < 10; ++i) {
        Vec x(2);
        x << 0.05 * i, 0.02 * i;
        panel.push_back(x);
        dirs.push_back(Vec::Unit(2, 0));
    }
    VerifyBoundsOptions opts;
    const BoundReport rep = verify_bounds(1, p, norms, panel, dirs, opts);
    CHECK(rep.pass);
    CHECK(rep.n_calibrated == 0.0);
}

TEST_CASE("tp2 order-2 panel passes with analytic second derivatives") {
    const BuiltinProblem tp2 = make_tp2();
    NormConfig ncfg;
    ncfg.resolution = 33;
    const NormReport norms = compute_norms(tp2.spec, tp2.dom, ncfg);
    std::vector<Vec> panel, dirs;
    for (int i = 0; i < 21; ++i) {
        Vec x(1);
        x << 1.05 + 0.9 * i / 21.0;
        panel.push_back(x);
        dirs.push_back(Vec::Ones(1));
    }
    VerifyBoundsOptions opts;
    const BoundReport rep = verify_bounds(2, tp2, norms, panel, dirs, opts);
    CHECK(rep.pass);
    CHECK(std::isfinite(rep.n_calibrated));
}

TEST_CASE("normal derivative bound on the disk: |u_(n)| = 2 at (1,0)") {
    const BuiltinProblem tp1 = make_tp1();
    NormConfig ncfg;
    ncfg.resolution = 33;
    const NormReport norms = compute_norms(tp1.spec, tp1.dom, ncfg);
    Vec y(2);
    y << 1.0, 0.0;
    NormalDerivativeOptions opts;
    opts.n_paths = 20000;
    opts.seed = 2029;
    opts.calibration_points = 8;
    const NormalDerivativeReport rep = normal_derivative_bound(tp1.spec, tp1.dom, norms, y, opts);
    CHECK(rep.measured == doctest::Approx(2.0).epsilon(0.06));
    CHECK(rep.verdict == "pass");
    CHECK(rep.normal[0] == doctest::Approx(-1.0));

    Vec interior(2);
    interior << 0.5, 0.0;
    CHECK_THROWS_AS(normal_derivative_bound(tp1.spec, tp1.dom, norms, interior, opts),
                    std::invalid_argument);
}
