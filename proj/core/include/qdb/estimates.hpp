#pragma once

#include <string>
#include <vector>

#include "qdb/builtin.hpp"
#include "qdb/perturbed.hpp"
#include "qdb/problem.hpp"

namespace qdb {

// Right-hand-side shape of the interior estimates:
//   order 1:  N (|xi0| + |psi_{(xi0)}(x)| / psi^{3/4}(x)) (|g|_{0,1} + ||f||_{0,1})
//   order 2:  N (|xi0|^2 + psi_{(xi0)}^2(x) / psi^{7/4}(x))
//               [ |g|_{1,1} + ||f||_{0,1} + [f]_{1,1} (1 + |g|_1^2 + ||f||_{0,1}^2) ]
// Throws a domain error when psi(x) <= 0.
double bound_rhs(int order, const DomainSpec& dom, const NormReport& norms, const Vec& x,
                 const Vec& xi0, double N);

// The shape factor alone (N and the norm bracket split out).
double bound_shape(int order, const DomainSpec& dom, const Vec& x, const Vec& xi0);
double norm_bracket(int order, const NormReport& norms);

struct NormalDerivativeReport {
    Vec y;                  // boundary point
    Vec normal;             // unit inward normal psi_x/|psi_x|
    double measured = 0.0;  // |u_{(n)}(y)| by one-sided quotient extrapolation
    double measured_ci = 0.0;
    double bound = 0.0;  // N (|g|_2 + |f(.,0,0)|_0)
    double n_calibrated = 0.0;
    std::string verdict;  // pass | fail | inconclusive
    std::vector<double> epsilons;
    std::vector<double> quotients;
};

struct NormalDerivativeOptions {
    std::vector<double> epsilons = {0.2, 0.1, 0.05, 0.025};
    double h = 1e-4;
    std::size_t n_paths = 20000;
    std::uint64_t seed = 0;
    BsdeMethod method = BsdeMethod::DriverFree;
    PicardOptions picard;
    // Boundary points used to calibrate N before the verdict at y.
    int calibration_points = 8;
    unsigned threads = 0;
};

NormalDerivativeReport normal_derivative_bound(const ProblemSpec& spec, const DomainSpec& dom,
                                               const NormReport& norms, const Vec& y_boundary,
                                               const NormalDerivativeOptions& opts);

enum class DerivativeSource { Analytic, Perturbed };

struct BoundReport {
    int order = 1;
    std::vector<Vec> points;
    std::vector<Vec> directions;
    std::vector<double> measured;
    std::vector<double> shape;
    double norms_factor = 0.0;
    double n_calibrated = 0.0;
    double holdout_max_ratio = 0.0;
    bool pass = false;  // held-out max ratio <= N * 1.1
    std::vector<std::size_t> calibration_indices;
    std::vector<std::size_t> holdout_indices;
    std::vector<std::size_t> failing_indices;
};

struct VerifyBoundsOptions {
    DerivativeSource source = DerivativeSource::Analytic;
    double calibration_fraction = 0.5;
    EstimatorOptions estimator;  // used when source == Perturbed
};

// Calibrates N = max(measured / (shape * norms)) on an interleaved split of
// the panel and validates the held-out points against N * 1.1. measured
// comes from the analytic oracle (built-ins) or the perturbed-FBSDE
// estimator.
BoundReport verify_bounds(int order, const BuiltinProblem& problem, const NormReport& norms,
                          const std::vector<Vec>& panel, const std::vector<Vec>& directions,
                          const VerifyBoundsOptions& opts);

}  // namespace qdb
