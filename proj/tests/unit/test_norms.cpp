#include <cmath>

#include "doctest.h"
#include "qdb/builtin.hpp"
#include "qdb/problem.hpp"

using namespace qdb;

namespace {

// d = 1 problem on (0,1) with configurable g.
BuiltinProblem unit_interval_problem(std::function<Vec(const Vec&)> g,
                                     std::function<Vec(const Vec&, const Vec&)> g_dir,
                                     std::function<Vec(const Vec&, const Vec&, const Vec&)> g_dir2) {
    BuiltinProblem p;
    ProblemSpec& s = p.spec;
    s.d = 1;
    s.d1 = 1;
    s.k = 1;
    s.sigma = [](const Vec&) { return Mat(Mat::Identity(1, 1)); };
    s.sigma_dir = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
    s.sigma_dir2 = [](const Vec&, const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
    s.b = [](const Vec&) { return Vec(Vec::Zero(1)); };
    s.b_dir = [](const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
    s.b_dir2 = [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
    s.f = [](const Vec&, const Vec&, const Mat&) { return Vec(Vec::Zero(1)); };
    s.f_jac = [](const Vec&, const Vec&, const Mat&) { return Mat(Mat::Zero(1, 3)); };
    s.g = std::move(g);
    s.g_dir = std::move(g_dir);
    s.g_dir2 = std::move(g_dir2);
    s.K0 = 10.0;
    DomainSpec& dm = p.dom;
    dm.psi = [](const Vec& x) { return 2.0 * x[0] * (1.0 - x[0]); };
    dm.psi_grad = [](const Vec& x) { return Vec((2.0 - 4.0 * x[0]) * Vec::Ones(1)); };
    dm.psi_hess = [](const Vec&) { return Mat(-4.0 * Mat::Identity(1, 1)); };
    dm.box_lo = Vec::Zero(1);
    dm.box_hi = Vec::Ones(1);
    return p;
}

}  // namespace

TEST_CASE("zero g has zero norms") {
    auto zero1 = [](const Vec&) { return Vec(Vec::Zero(1)); };
    const BuiltinProblem p = unit_interval_problem(
        zero1, [](const Vec&, const Vec&) { return Vec(Vec::Zero(1)); },
        [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); });
    NormConfig cfg;
    cfg.resolution = 16;
    const NormReport r = compute_norms(p.spec, p.dom, cfg);
    CHECK(r.g0 == 0.0);
    CHECK(r.g1 == 0.0);
    CHECK(r.g2 == 0.0);
    CHECK(r.g_lip0 == 0.0);
    CHECK(r.f00 == 0.0);
    CHECK(r.lower_bound_estimates);
}

TEST_CASE("g(x) = x on (0,1): |g|_0 = 1, |g|_1 = 2, [g]_{0,1} = 1") {
    const BuiltinProblem p = unit_interval_problem(
        [](const Vec& x) { return Vec(x); },
        [](const Vec&, const Vec& y) { return Vec(y); },
        [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); });
    NormConfig cfg;
    cfg.resolution = 33;
    const NormReport r = compute_norms(p.spec, p.dom, cfg);
    CHECK(r.g0 == doctest::Approx(1.0));
    CHECK(r.g1 == doctest::Approx(2.0));
    CHECK(r.g_lip0 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.g01 == doctest::Approx(2.0));
}

TEST_CASE("tp1 norms: |g|_0 = 1 on the closed disk and |g|_{0,1} = 3") {
    const BuiltinProblem tp1 = make_tp1();
    NormConfig cfg;
    cfg.resolution = 41;
    const NormReport r = compute_norms(tp1.spec, tp1.dom, cfg);
    // max |x1^2 - x2^2| = 1 attained on the boundary axes.
    CHECK(r.g0 == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(r.g0 <= 1.0 + 1e-12);  // grid estimates are lower bounds
    // |grad g| = 2|x| <= 2, so [g]_{0,1} estimates approach 2.
    CHECK(r.g_lip0 <= 2.0 + 1e-9);
    CHECK(r.g_lip0 > 1.8);
    CHECK(r.g01 == doctest::Approx(3.0).epsilon(0.05));
    CHECK(r.f00 == 0.0);
    CHECK(r.f01 == 0.0);
}

TEST_CASE("norm estimates are monotone under nested grid refinement") {
    const BuiltinProblem tp1 = make_tp1();
    NormConfig coarse;
    coarse.resolution = 17;
    NormConfig fine;
    fine.resolution = 33;  // linspace(17) is a subset of linspace(33)
    const NormReport a = compute_norms(tp1.spec, tp1.dom, coarse);
    const NormReport b = compute_norms(tp1.spec, tp1.dom, fine);
    CHECK(b.g0 >= a.g0);
    CHECK(b.g1 >= a.g1);
    CHECK(b.g2 >= a.g2);
    CHECK(b.f00 >= a.f00);
}

TEST_CASE("norm ordering |g|_0 <= |g|_1 <= |g|_2") {
    for (const char* name : {"tp1", "tp2", "tp3"}) {
        const BuiltinProblem p = make_builtin(name);
        NormConfig cfg;
        cfg.resolution = 17;
        const NormReport r = compute_norms(p.spec, p.dom, cfg);
        CHECK(r.g0 <= r.g1);
        CHECK(r.g1 <= r.g2);
        CHECK(r.g0 >= 0.0);
    }
}

TEST_CASE("resolution below 8 is rejected") {
    const BuiltinProblem tp1 = make_tp1();
    NormConfig cfg;
    cfg.resolution = 4;
    CHECK_THROWS_AS(compute_norms(tp1.spec, tp1.dom, cfg), std::invalid_argument);
}

TEST_CASE("non-finite callback values are diagnosed") {
    BuiltinProblem p = unit_interval_problem(
        [](const Vec& x) {
            Vec v(1);
            v[0] = 1.0 / (x[0] - 0.5);  // blows up inside the domain
            return v;
        },
        [](const Vec&, const Vec&) { return Vec(Vec::Zero(1)); },
        [](const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); });
    NormConfig cfg;
    cfg.resolution = 9;
    CHECK_THROWS_AS(compute_norms(p.spec, p.dom, cfg), std::runtime_error);
}

TEST_CASE("tp2 driver norms: f = -c y has no x dependence") {
    const BuiltinProblem tp2 = make_tp2();
    NormConfig cfg;
    cfg.resolution = 17;
    const NormReport r = compute_norms(tp2.spec, tp2.dom, cfg);
    CHECK(r.f00 == 0.0);
    CHECK(r.f_lip_x == 0.0);
    CHECK(r.f11 == 0.0);  // constant Jacobian
}
