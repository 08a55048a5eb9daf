#pragma once

#include "qdb/problem.hpp"

namespace qdb {

// Closed-form solution data for the built-in test problems; used as the
// oracle side of estimator checks.
struct AnalyticSolution {
    std::function<Vec(const Vec&)> u;
    std::function<Vec(const Vec&, const Vec&)> u_dir;               // u_{(y)}
    std::function<Vec(const Vec&, const Vec&, const Vec&)> u_dir2;  // u_{(y)(z)}
    std::function<double(const Vec&)> expected_exit_time;           // E[tau(x)], when known
};

struct BuiltinProblem {
    std::string name;
    ProblemSpec spec;
    DomainSpec dom;
    InteriorScheme interior;
    AnalyticSolution analytic;
    bool has_analytic = false;
    bool has_exit_time_formula = false;
    bool driver_free_legal = true;  // f depends on x only
};

// tp1: unit disk, sigma = sqrt(2) I, b = 0, f = 0, g = x1^2 - x2^2.
// The solution is the harmonic extension u = g itself.
BuiltinProblem make_tp1();

// tp2: d = 1 Euler problem on (1,2): sigma = x, b = b1 x, f = -c y, g = x.
// u = A x^alpha1 + B x^alpha2 with the alphas solving the indicial equation.
BuiltinProblem make_tp2(double b1 = 0.3, double c = 1.0);

// tp3: unit disk, sigma = sqrt(2) I, b = 0, manufactured
// u*(x) = sin(x1) sinh(x2) (1 - |x|^2/4), f = -L u*, g = u*.
BuiltinProblem make_tp3();

// General 1-d family sigma = sigma1 x, b = b1 x, f = -c y, g = x on
// (x_lo, x_hi) with 0 < x_lo < x_hi; tp2 is the (1, 0.3, 1, 1, 2) member.
BuiltinProblem make_power_1d(double sigma1, double b1, double c, double x_lo, double x_hi);

// Lookup by name ("tp1", "tp2", "tp3"); throws std::invalid_argument on
// unknown names.
BuiltinProblem make_builtin(const std::string& name);

}  // namespace qdb
