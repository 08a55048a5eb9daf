#include <cmath>

#include "doctest.h"
#include "qdb/builtin.hpp"
#include "qdb/philox.hpp"
#include "qdb/quasi.hpp"

using namespace qdb;

TEST_CASE("boundary scheme hand values on the disk") {
    BuiltinProblem tp1 = make_tp1();
    tp1.dom.lambda = 0.45;
    tp1.dom.delta1 = 0.01;
    Vec x(2), e1(2);
    x << 0.5, 0.0;
    e1 << 1.0, 0.0;
    const QuasiCoeffs c = boundary_scheme(tp1.spec, tp1.dom, x, e1, 1.0);
    // psi = 0.375, psi_(e1) = -0.5, A = 2|x|^2 = 0.5, rbar = -2, phi = 0.499375.
    CHECK(c.r == doctest::Approx(-10.0 / 3.0).epsilon(1e-12));
    CHECK(c.r_tilde == doctest::Approx(16.0 / 9.0).epsilon(1e-12));
    CHECK(c.pi[0] == doctest::Approx(7.5519122229351759).epsilon(1e-12));
    CHECK(c.pi[1] == 0.0);
    CHECK(c.pi_tilde.norm() == 0.0);
    CHECK(c.P_tilde.norm() == 0.0);
    // On the x1 axis with xi = e1 the rotation vanishes.
    CHECK(c.P.norm() == 0.0);

    // Moment order 2 doubles pi.
    const QuasiCoeffs c2 = boundary_scheme(tp1.spec, tp1.dom, x, e1, 2.0);
    CHECK(c2.pi[0] == doctest::Approx(2.0 * c.pi[0]).epsilon(1e-14));
    CHECK(c2.r == c.r);

    // Off-axis point: P is skew exactly.
    Vec x2(2);
    x2 << 0.5, 0.3;
    const QuasiCoeffs coff = boundary_scheme(tp1.spec, tp1.dom, x2, e1, 1.0);
    CHECK((coff.P + coff.P.transpose()).norm() == 0.0);
    CHECK(coff.P(0, 1) == doctest::Approx(0.6 / 0.68).epsilon(1e-12));

    // xi = 0 turns every control off.
    const QuasiCoeffs c0 = boundary_scheme(tp1.spec, tp1.dom, x, Vec::Zero(2), 1.0);
    CHECK(c0.r == 0.0);
    CHECK(c0.r_tilde == 0.0);
    CHECK(c0.pi.norm() == 0.0);
    CHECK(c0.P.norm() == 0.0);

    // Out-of-region evaluation is refused.
    Vec center(2);
    center << 0.0, 0.0;
    CHECK_THROWS_AS(boundary_scheme(tp1.spec, tp1.dom, center, e1, 1.0), std::domain_error);
}

TEST_CASE("1x1 rotations are exactly zero (d1 = 1)") {
    const BuiltinProblem tp2 = make_tp2();
    const Vec x = 1.5 * Vec::Ones(1);
    // Make the point lie in the boundary region.
    DomainSpec dm = tp2.dom;
    dm.lambda = 0.9 * dm.psi(x);
    dm.delta1 = 0.1 * dm.lambda * dm.lambda;
    Vec xb(1);
    xb << 1.05;
    REQUIRE(dm.psi(xb) < dm.lambda);
    REQUIRE(dm.psi(xb) > dm.delta1);
    const QuasiCoeffs c = boundary_scheme(tp2.spec, dm, xb, Vec::Ones(1), 1.0);
    CHECK(c.P.rows() == 1);
    CHECK(c.P(0, 0) == 0.0);
}

TEST_CASE("interior scheme values and linearity") {
    const BuiltinProblem tp1 = make_tp1();
    Vec x(2), e1(2);
    x << 0.2, 0.1;
    e1 << 1.0, 0.0;
    const QuasiCoeffs c = interior_scheme(tp1.spec, tp1.dom, tp1.interior, x, e1);
    // rho = 0 -> r = 0; M = 1, sigma = sqrt(2) I -> pi = (sqrt(2)/2) e1.
    CHECK(c.r == 0.0);
    CHECK(c.pi[0] == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-14));
    CHECK(c.pi[1] == 0.0);
    CHECK(c.P.norm() == 0.0);

    // Declared linearity of Q: doubling xi doubles P.
    InteriorScheme sch = tp1.interior;
    sch.Q = [](const Vec&, const Vec& y) {
        Mat q(2, 2);
        q << 0.0, y[0] + 0.5 * y[1], -(y[0] + 0.5 * y[1]), 0.0;
        return q;
    };
    const QuasiCoeffs ca = interior_scheme(tp1.spec, tp1.dom, sch, x, e1);
    const QuasiCoeffs cb = interior_scheme(tp1.spec, tp1.dom, sch, x, Vec(2.0 * e1));
    CHECK((cb.P - 2.0 * ca.P).norm() < 1e-12);
    CHECK((ca.P + ca.P.transpose()).norm() == 0.0);

    // Tilde fields evaluate the same maps at eta.
    Vec eta(2);
    eta << 0.3, -0.2;
    const QuasiCoeffs ct = interior_scheme(tp1.spec, tp1.dom, tp1.interior, x, e1, &eta);
    CHECK(ct.pi_tilde[0] == doctest::Approx(std::sqrt(2.0) / 2.0 * 0.3).epsilon(1e-14));
    CHECK(ct.r_tilde == 0.0);

    // Out of the interior region.
    Vec edge(2);
    edge << 0.999, 0.0;
    DomainSpec dm = tp1.dom;
    dm.lambda = 0.3;
    CHECK(dm.psi(edge) < dm.lambda * dm.lambda);
    CHECK_THROWS_AS(interior_scheme(tp1.spec, dm, tp1.interior, edge, e1), std::domain_error);
}

TEST_CASE("constant coefficients with zero controls freeze xi") {
    const BuiltinProblem tp1 = make_tp1();
    SimOptions sim;
    sim.h = 1e-2;
    sim.n_paths = 4;
    sim.seed = 21;
    Vec x0(2), xi0(2);
    x0 << 0.3, 0.2;
    xi0 << 0.7, -0.1;
    const PathEnsemble ens = simulate_ensemble(tp1.spec, tp1.dom, x0, sim);
    QuasiOptions qo;
    qo.scheme = SchemeKind::Zero;
    const QuasiTrajectory traj = evolve_first(ens, tp1.spec, tp1.dom, nullptr, xi0, qo);
    for (const auto& rec : traj.paths) {
        CHECK((rec.xi_stop - xi0).norm() == 0.0);
        CHECK(rec.xi0_stop == 0.0);
    }
}

TEST_CASE("sigma = x with zero controls: xi tracks the flow exactly") {
    // d xi = xi dW and dX = X dW share increments, so xi/xi0 = X/x0 pathwise.
    const BuiltinProblem fam = make_power_1d(1.0, 0.0, 1.0, 0.5, 2.0);
    SimOptions sim;
    sim.h = 1e-3;
    sim.n_paths = 8;
    sim.seed = 31;
    sim.store = true;
    const Vec x0 = Vec::Ones(1);  // xi0 = x0 makes the two recursions identical
    const PathEnsemble ens = simulate_ensemble(fam.spec, fam.dom, x0, sim);
    QuasiOptions qo;
    qo.scheme = SchemeKind::Zero;
    qo.store = true;
    const QuasiTrajectory traj = evolve_first(ens, fam.spec, fam.dom, nullptr, Vec::Ones(1), qo);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const Mat& xi = traj.store->xi[p];
        for (Eigen::Index i = 0; i < xi.rows(); ++i)
            CHECK(xi(i, 0) == ens.store->states[p](i, 0));
    }
}

TEST_CASE("scheme linearity: doubling xi0 doubles the trajectory exactly") {
    BuiltinProblem tp1 = make_tp1();
    tp1.dom.lambda = 0.2;
    tp1.dom.delta1 = 0.01;
    Vec x0(2);
    x0 << std::sqrt(1.0 - 2.0 * 0.1), 0.0;  // psi = 0.1, inside the boundary region
    REQUIRE(tp1.dom.psi(x0) == doctest::Approx(0.1));
    SimOptions sim;
    sim.h = 1e-5;
    sim.t_max = 0.02;
    sim.n_paths = 16;
    sim.seed = 41;
    const PathEnsemble ens = simulate_ensemble(tp1.spec, tp1.dom, x0, sim);
    Vec xi0(2);
    xi0 << 0.0, 1.0;  // tangential
    QuasiOptions qo;
    qo.scheme = SchemeKind::Boundary;
    qo.store = true;
    const QuasiTrajectory t1 = evolve_first(ens, tp1.spec, tp1.dom, nullptr, xi0, qo);
    const QuasiTrajectory t2 = evolve_first(ens, tp1.spec, tp1.dom, nullptr, Vec(2.0 * xi0), qo);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        REQUIRE(t1.paths[p].stop_step == t2.paths[p].stop_step);
        const Mat& a = t1.store->xi[p];
        const Mat& b = t2.store->xi[p];
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double scale = std::max(1.0, a.row(i).norm());
            CHECK((b.row(i) - 2.0 * a.row(i)).norm() / scale < 1e-10);
        }
    }
}

TEST_CASE("ratio process matches a direct discretization of its displayed SDE") {
    // Along the boundary scheme, psi_(xi_t)(X_t) solves
    //   d psi_(xi) = (psi_(xi)/psi) psi_(sigma) dW + [(L psi)_(xi) + 2 r L psi
    //                - psi_(sigma).pi] dt,
    // which for the disk has (L psi)_(xi) = 0. Discretizing that scalar SDE on
    // shared noise must agree with the evolved pair at O(h).
    BuiltinProblem tp1 = make_tp1();
    tp1.dom.lambda = 0.2;
    tp1.dom.delta1 = 0.01;
    Vec x0(2), xi0(2);
    x0 << std::sqrt(1.0 - 2.0 * 0.1), 0.0;
    xi0 << 0.3, 1.0;
    const CounterRng rng(171);

    auto sup_gap = [&](double h) {
        const std::size_t n_steps = static_cast<std::size_t>(0.004 / h);
        double worst = 0.0;
        for (std::size_t p = 0; p < 64; ++p) {
            QuasiOptions qo;
            qo.scheme = SchemeKind::Boundary;
            QuasiEvolver ev(tp1.spec, tp1.dom, nullptr, qo, xi0, Vec::Zero(2));
            Vec x = x0;
            double q = tp1.dom.psi_grad(x0).dot(xi0);
            for (std::size_t i = 0; i < n_steps; ++i) {
                Vec z(2), dw(2);
                z << rng.normal(p, i, 0), rng.normal(p, i, 1);
                dw = std::sqrt(h) * z;
                if (!ev.precheck(i, x)) break;
                ev.consume(i, x, dw, h);
                if (!ev.running()) break;
                const auto& c = ev.last_coeffs();
                const double psi = tp1.dom.psi(x);
                const Vec psi_sig = tp1.spec.sigma(x).transpose() * tp1.dom.psi_grad(x);
                const double lpsi = -2.0;
                q += (q / psi) * psi_sig.dot(dw) + (2.0 * c.r * lpsi - psi_sig.dot(c.pi)) * h;
                Vec x_next(2);
                detail::euler_step(tp1.spec, x, dw, h, x_next);
                if (tp1.dom.psi(x_next) <= 0) break;
                x = x_next;
                worst = std::max(worst, std::abs(q - tp1.dom.psi_grad(x).dot(ev.xi())));
            }
        }
        return worst;
    };

    const double gap_h = sup_gap(4e-6);
    const double gap_h2 = sup_gap(2e-6);
    CHECK(gap_h2 < gap_h);
    CHECK(gap_h2 < 0.75 * gap_h);  // O(h) consistency
}

TEST_CASE("affine coefficients with zero controls keep eta at zero") {
    const BuiltinProblem tp1 = make_tp1();
    SimOptions sim;
    sim.h = 1e-2;
    sim.n_paths = 4;
    sim.seed = 61;
    Vec x0(2), xi0(2);
    x0 << 0.1, 0.1;
    xi0 << 1.0, 0.0;
    const PathEnsemble ens = simulate_ensemble(tp1.spec, tp1.dom, x0, sim);
    QuasiOptions qo;
    qo.scheme = SchemeKind::Zero;
    QuasiTrajectory first = evolve_first(ens, tp1.spec, tp1.dom, nullptr, xi0, qo);
    const QuasiTrajectory second =
        evolve_second(ens, tp1.spec, tp1.dom, nullptr, first, Vec::Zero(2));
    for (const auto& rec : second.paths) {
        CHECK(rec.eta_stop.norm() == 0.0);
        CHECK(rec.eta0_stop == 0.0);
    }
}

TEST_CASE("eta is linear in eta0 for linear coefficients with zero controls") {
    const BuiltinProblem fam = make_power_1d(1.0, 0.1, 1.0, 0.5, 2.0);
    SimOptions sim;
    sim.h = 1e-3;
    sim.n_paths = 8;
    sim.seed = 71;
    const Vec x0 = Vec::Ones(1);
    const PathEnsemble ens = simulate_ensemble(fam.spec, fam.dom, x0, sim);
    QuasiOptions qo;
    qo.scheme = SchemeKind::Zero;
    qo.store = true;
    QuasiTrajectory first = evolve_first(ens, fam.spec, fam.dom, nullptr, Vec::Ones(1), qo);
    const QuasiTrajectory a = evolve_second(ens, fam.spec, fam.dom, nullptr, first, Vec::Ones(1));
    const QuasiTrajectory b =
        evolve_second(ens, fam.spec, fam.dom, nullptr, first, Vec(2.0 * Vec::Ones(1)));
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const Mat& ea = a.store->eta[p];
        const Mat& eb = b.store->eta[p];
        for (Eigen::Index i = 0; i < ea.rows(); ++i)
            CHECK(std::abs(eb(i, 0) - 2.0 * ea(i, 0)) <= 1e-12 * std::max(1.0, std::abs(eb(i, 0))));
    }
}

TEST_CASE("martingale statistic: null drift for harmonic v, refusal otherwise") {
    const BuiltinProblem tp1 = make_tp1();
    SimOptions sim;
    sim.h = 1e-3;
    sim.t_max = 0.12;
    sim.n_paths = 10000;
    sim.seed = 2027;
    Vec x0 = Vec::Zero(2), xi0(2);
    xi0 << 1.0, 0.0;
    const PathEnsemble ens = simulate_ensemble(tp1.spec, tp1.dom, x0, sim);
    QuasiOptions qo;
    qo.scheme = SchemeKind::Interior;
    qo.evolve_eta = true;
    qo.clip_n = 1e3;

    TestFunction v_one{"1", [](const Vec&) { return 1.0; },
                       [](const Vec&) { return Vec(Vec::Zero(2)); },
                       [](const Vec&) { return Mat(Mat::Zero(2, 2)); }};
    TestFunction v_x1{"x1", [](const Vec& x) { return x[0]; },
                      [](const Vec&) { return Vec(Vec::Unit(2, 0)); },
                      [](const Vec&) { return Mat(Mat::Zero(2, 2)); }};
    TestFunction v_quad{"x1^2-x2^2", [](const Vec& x) { return x[0] * x[0] - x[1] * x[1]; },
                        [](const Vec& x) {
                            Vec g(2);
                            g << 2 * x[0], -2 * x[1];
                            return g;
                        },
                        [](const Vec&) {
                            Mat m(2, 2);
                            m << 2, 0, 0, -2;
                            return m;
                        }};

    const std::vector<double> cps = {0.05, 0.1};
    for (const auto& v : {v_one, v_x1, v_quad}) {
        const MartingaleReport rep =
            martingale_statistic(v, ens, tp1.spec, tp1.dom, &tp1.interior, xi0, qo, cps);
        CHECK(rep.includes_second);
        for (const auto& row : rep.rows) {
            CHECK(std::abs(row.z_first) < 3.5);
            CHECK(std::abs(row.z_second) < 3.5);
        }
    }

    TestFunction v_bad{"x1^2", [](const Vec& x) { return x[0] * x[0]; },
                       [](const Vec& x) {
                           Vec g(2);
                           g << 2 * x[0], 0;
                           return g;
                       },
                       [](const Vec&) {
                           Mat m(2, 2);
                           m << 2, 0, 0, 0;
                           return m;
                       }};
    CHECK_THROWS_AS(
        martingale_statistic(v_bad, ens, tp1.spec, tp1.dom, &tp1.interior, xi0, qo, cps),
        std::invalid_argument);
}

TEST_CASE("interior decay on the disk: xi_t = xi0 e^{-t} for M = 1") {
    // rho = Q = 0, M = 1, sigma = sqrt(2) I, b = 0: the xi drift is -a xi = -xi.
    const BuiltinProblem tp1 = make_tp1();
    SimOptions sim;
    sim.h = 1e-4;
    sim.t_max = 0.3;
    sim.n_paths = 4;
    sim.seed = 5150;
    const PathEnsemble ens = simulate_ensemble(tp1.spec, tp1.dom, Vec::Zero(2), sim);
    QuasiOptions qo;
    qo.scheme = SchemeKind::Interior;
    qo.store = true;
    Vec xi0(2);
    xi0 << 1.0, 0.0;
    const QuasiTrajectory traj = evolve_first(ens, tp1.spec, tp1.dom, &tp1.interior, xi0, qo);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const Mat& xi = traj.store->xi[p];
        const Eigen::Index last = xi.rows() - 1;
        const double t = static_cast<double>(last) * sim.h;
        CHECK(xi(last, 0) == doctest::Approx(std::exp(-t)).epsilon(1e-3));
        CHECK(xi(last, 1) == 0.0);
    }
}

TEST_CASE("boundary_stable_h is positive and shrinks with delta1") {
    BuiltinProblem tp1 = make_tp1();
    tp1.dom.lambda = 0.1;
    tp1.dom.delta1 = 0.005;
    const double h1 = boundary_stable_h(tp1.spec, tp1.dom, 1.0);
    tp1.dom.delta1 = 0.0025;
    const double h2 = boundary_stable_h(tp1.spec, tp1.dom, 1.0);
    CHECK(h1 > 0.0);
    CHECK(h2 < h1);
    const double h4 = boundary_stable_h(tp1.spec, tp1.dom, 2.0);
    CHECK(h4 < h2);
}
