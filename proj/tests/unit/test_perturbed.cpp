#include <cmath>

#include "doctest.h"
#include "qdb/builtin.hpp"
#include "qdb/perturbed.hpp"

using namespace qdb;

namespace {

QuasiTrajectory interior_traj(const Vec& xi0) {
    QuasiTrajectory traj;
    traj.opts.scheme = SchemeKind::Interior;
    traj.xi0_init = xi0;
    traj.eta0_init = Vec::Zero(xi0.size());
    return traj;
}

}  // namespace

TEST_CASE("delta = 0 reproduces the base paths bit-exactly") {
    const BuiltinProblem tp1 = make_tp1();
    SimOptions sim;
    sim.h = 1e-3;
    sim.n_paths = 16;
    sim.seed = 7;
    Vec x0(2), xi0(2);
    x0 << 0.4, 0.1;
    xi0 << 1.0, 0.0;
    const PathEnsemble ens = simulate_ensemble(tp1.spec, tp1.dom, x0, sim);
    const PerturbationRun run =
        simulate_perturbed(ens, tp1.spec, tp1.dom, &tp1.interior, interior_traj(xi0), 0.0, +1, {});
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        CHECK(run.paths[p].exit_step == ens.paths[p].exit_step);
        CHECK(run.paths[p].refined_exit_time == ens.paths[p].refined_exit_time);
        CHECK((run.paths[p].exit_state - ens.paths[p].exit_state).norm() == 0.0);
        CHECK(run.weight[p] == 1.0);
    }
}

TEST_CASE("zero controls with constant coefficients: X^d - X = d xi0 for all t") {
    BuiltinProblem tp1 = make_tp1();
    SimOptions sim;
    sim.h = 1e-3;
    sim.t_max = 0.05;
    sim.n_paths = 8;
    sim.seed = 13;
    sim.store = true;
    Vec x0(2), xi0(2);
    x0 << 0.0, 0.0;
    xi0 << 1.0, 0.0;
    const PathEnsemble ens = simulate_ensemble(tp1.spec, tp1.dom, x0, sim);
    QuasiTrajectory traj;
    traj.opts.scheme = SchemeKind::Zero;
    traj.xi0_init = xi0;
    PerturbOptions popts;
    popts.store = true;
    const double delta = 0.05;
    const PerturbationRun run =
        simulate_perturbed(ens, tp1.spec, tp1.dom, nullptr, traj, delta, +1, popts);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        const Mat& xs = ens.store->states[p];
        const Mat& xp = run.store->states[p];
        const auto rows = std::min(xs.rows(), xp.rows());
        for (Eigen::Index i = 0; i < rows; ++i) {
            CHECK(std::abs(xp(i, 0) - xs(i, 0) - delta) < 1e-14);
            CHECK(std::abs(xp(i, 1) - xs(i, 1)) < 1e-14);
        }
        CHECK(run.weight[p] == 1.0);
    }
}

TEST_CASE("coupling stencil: averaging the +/- start points recovers x") {
    const BuiltinProblem tp1 = make_tp1();
    SimOptions sim;
    sim.h = 2e-3;
    sim.n_paths = 2;
    sim.seed = 19;
    Vec x0(2), xi0(2);
    x0 << 0.3, -0.2;
    xi0 << 0.6, 0.8;
    const PathEnsemble ens = simulate_ensemble(tp1.spec, tp1.dom, x0, sim);
    const auto traj = interior_traj(xi0);
    const PerturbationRun plus =
        simulate_perturbed(ens, tp1.spec, tp1.dom, &tp1.interior, traj, 0.1, +1, {});
    const PerturbationRun minus =
        simulate_perturbed(ens, tp1.spec, tp1.dom, &tp1.interior, traj, 0.1, -1, {});
    CHECK((0.5 * (plus.start_shift + minus.start_shift) - x0).norm() < 1e-15);
}

TEST_CASE("flow-derivative convergence on the disk, interior controls") {
    // X^d - X = d xi exactly for this problem, so sup errors sit at the
    // discretization floor and the ratio test is trivially satisfied; this
    // checks plumbing, the acceptance suite runs the boundary scheme.
    const BuiltinProblem tp1 = make_tp1();
    FlowOptions fo;
    fo.deltas = {0.1, 0.05, 0.025};
    fo.h = 5e-4;
    fo.horizon = 0.25;
    fo.n_paths = 500;
    fo.seed = 23;
    fo.scheme = SchemeKind::Interior;
    Vec x0 = Vec::Zero(2), xi0(2);
    xi0 << 1.0, 0.0;
    const auto rep = flow_convergence(tp1.spec, tp1.dom, &tp1.interior, x0, xi0, fo);
    REQUIRE(rep.sup_error_first.size() == 3);
    for (double e : rep.sup_error_first) CHECK(e < 5e-3);
}

TEST_CASE("gradient estimate recovers the analytic derivative on the disk") {
    const BuiltinProblem tp1 = make_tp1();
    EstimatorOptions opts;
    opts.deltas = {0.1, 0.05, 0.025};
    opts.h = 1e-3;
    opts.n_paths = 8000;
    opts.seed = 29;
    opts.scheme = SchemeKind::Interior;
    Vec x(2), xi0(2);
    x << 0.5, 0.0;
    xi0 << 1.0, 0.0;
    const QuotientReport rep = grad_estimate(tp1.spec, tp1.dom, &tp1.interior, x, xi0, opts);
    // d1 u = 2 x1 = 1.
    CHECK(std::abs(rep.estimate[0] - 1.0) < rep.ci95[0] + 0.05);
    CHECK(rep.verdict == "converged");
    CHECK(rep.guard_violation_rate < 0.01);
}

TEST_CASE("gradient of a constant solution is zero") {
    BuiltinProblem tp1 = make_tp1();
    tp1.spec.g = [](const Vec&) { return Vec(2.0 * Vec::Ones(1)); };
    tp1.spec.g_dir = [](const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
    tp1.spec.g_dir2 = [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
    EstimatorOptions opts;
    opts.deltas = {0.1, 0.05, 0.025};
    opts.n_paths = 2000;
    opts.seed = 31;
    opts.scheme = SchemeKind::Interior;
    Vec x(2), xi0(2);
    x << 0.2, 0.0;
    xi0 << 1.0, 0.0;
    const QuotientReport rep = grad_estimate(tp1.spec, tp1.dom, &tp1.interior, x, xi0, opts);
    // Every quotient involves g(X^d) - g(X) = 0; only the Girsanov weight
    // fluctuates, and its mean contribution vanishes (z-test at 3 sigma).
    CHECK(std::abs(rep.estimate[0]) < 3.0 / 1.96 * rep.ci95[0] + 1e-4);
}

TEST_CASE("hessian estimate recovers d11 u = 2 on the disk") {
    // The second quotient's per-path noise grows like delta^{-3/2} (exit-time
    // mismatch of the three coupled paths), so the ladder sits at larger
    // deltas than the gradient's.
    const BuiltinProblem tp1 = make_tp1();
    EstimatorOptions opts;
    opts.deltas = {0.2, 0.1414, 0.1};
    opts.h = 1e-3;
    opts.n_paths = 20000;
    opts.seed = 37;
    opts.scheme = SchemeKind::Interior;
    Vec x(2), xi0(2);
    x << 0.5, 0.0;
    xi0 << 1.0, 0.0;
    const QuotientReport rep = hessian_estimate(tp1.spec, tp1.dom, &tp1.interior, x, xi0, opts);
    CHECK(std::abs(rep.estimate[0] - 2.0) < rep.ci95[0] + 0.15);
    CHECK(rep.ci95[0] < 1.2);
}

TEST_CASE("picard-route gradient on tp2 matches the ODE derivative") {
    // Deep in the interior the zero controls suffice (the scheme apparatus
    // matters near the boundary); tp2's interior M is sized for (H10)_2 and
    // would trip the delta pi smallness guard at delta = 0.1.
    const BuiltinProblem tp2 = make_tp2();
    EstimatorOptions opts;
    opts.deltas = {0.1, 0.05, 0.025};
    opts.h = 1e-3;
    opts.n_paths = 3000;
    opts.seed = 41;
    opts.scheme = SchemeKind::Zero;
    opts.method = BsdeMethod::Picard;
    opts.picard.max_iter = 12;
    Vec x(1), xi0(1);
    x << 1.5;
    xi0 << 1.0;
    const QuotientReport rep = grad_estimate(tp2.spec, tp2.dom, &tp2.interior, x, xi0, opts);
    // u'(1.5) = 1.0364036907485451 from the closed form.
    CHECK(std::abs(rep.estimate[0] - 1.0364036907485451) < rep.ci95[0] + 0.08);
}

TEST_CASE("estimator rejects malformed requests") {
    const BuiltinProblem tp1 = make_tp1();
    EstimatorOptions opts;
    opts.deltas = {0.1};
    Vec x(2), xi0(2);
    x << 0.5, 0.0;
    xi0 << 1.0, 0.0;
    CHECK_THROWS_AS(grad_estimate(tp1.spec, tp1.dom, &tp1.interior, x, xi0, opts),
                    std::invalid_argument);
}
