#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qdb/bsde.hpp"
#include "qdb/quasi.hpp"
#include "qdb/sde.hpp"

namespace qdb {

// The perturbed forward dynamics, driven by the base ensemble's increments:
//   dX^d = [ (1 + 2 d r + d^2 r~) b(X^d) - A_t (d pi + d^2/2 pi~) ] dt + A_t dW
//   A_t  = (1 + 2 d r + d^2 r~)^(1/2) sigma(X^d) e^{d P} e^{d^2/2 P~}
// with the controls read from the base-path trace (they are processes of the
// base construction, zero once the base trajectory stops). The backward
// value uses the time-changed driver plus the measure-change compensation;
// for driver-free problems the compensation is carried as the exponential
// Girsanov weight recorded per path.
struct PerturbationRun {
    double delta = 0.0;
    int sign = +1;
    Vec start_shift;  // x + sign*delta*xi0 + delta^2/2 eta0
    std::vector<PathSummary> paths;
    std::vector<double> weight;        // Girsanov weight at the perturbed terminal
    std::vector<Vec> driver_integral;  // int (1 + 2 d r + d^2 r~) f(X^d, 0, 0) dt
    std::vector<Vec> terminal_g;       // g at the perturbed exit state
    std::vector<unsigned char> guard_violated;
    double guard_violation_rate = 0.0;
    std::optional<PathStore> store;
    // With store: per path, per step [time-change factor, Girsanov log-weight
    // increment], consumed by the weighted backward regression.
    std::vector<Mat> controls;
};

struct PerturbOptions {
    bool second_order = false;  // evolve eta and activate r~ from the scheme
    Vec eta0;                   // start shift for the second-order stencil (default 0)
    bool store = false;
    unsigned threads = 0;
};

// Simulates X^delta for one signed delta on the base ensemble's noise. The
// controls are recomputed in lockstep from (X, xi) with the trajectory's
// scheme and options. Steps violating the smallness guards
//   0 <= 1 + 2 d r + d^2 r~ <= 2,   |d pi| + d^2/2 |pi~| <= 1
// mark the path; the error payload of an all-violating run advises a smaller
// delta.
PerturbationRun simulate_perturbed(const PathEnsemble& ens, const ProblemSpec& spec,
                                   const DomainSpec& dom, const InteriorScheme* interior,
                                   const QuasiTrajectory& traj, double delta, int sign,
                                   const PerturbOptions& popts = {});

struct QuotientReport {
    Vec estimate;  // extrapolated value in R^k
    Vec ci95;
    std::vector<double> deltas;
    std::vector<Vec> quotients;     // per delta
    std::vector<Vec> quotient_se;   // per delta
    std::string verdict;            // converged | non-monotone | inconclusive
    double guard_violation_rate = 0.0;
    double capped_rate = 0.0;
};

struct EstimatorOptions {
    std::vector<double> deltas = {1e-1, 5e-2, 2.5e-2};
    double h = 1e-3;       // shrunk to min(h, 0.8 * delta_min^2) so h <= delta^2 holds
    double t_max = 0.0;
    std::size_t n_paths = 100000;
    std::uint64_t seed = 0;
    double clip_n = 0.0;
    BsdeMethod method = BsdeMethod::DriverFree;
    PicardOptions picard;
    SchemeKind scheme = SchemeKind::Interior;  // chosen by the caller for the region of x
    double moment_order = 1.0;
    unsigned threads = 0;
};

// First difference quotient (Y0^d - Y0)/d over the delta ladder, coupled per
// path through shared noise, Richardson-extrapolated to delta = 0. Realizes
// u_{(xi0)}(x).
QuotientReport grad_estimate(const ProblemSpec& spec, const DomainSpec& dom,
                             const InteriorScheme* interior, const Vec& x, const Vec& xi0,
                             const EstimatorOptions& opts);

// Second quotient (Y0^d - 2 Y0 + Y0^{-d})/d^2 with eta0 = 0, realizing
// u_{(xi0)(xi0)}(x).
QuotientReport hessian_estimate(const ProblemSpec& spec, const DomainSpec& dom,
                                const InteriorScheme* interior, const Vec& x, const Vec& xi0,
                                const EstimatorOptions& opts);

struct FlowOptions {
    std::vector<double> deltas = {1e-1, 5e-2, 2.5e-2};
    double h = 1e-3;
    double horizon = 1.0;  // sup taken over [0, tau ^ tau^d ^ k_n ^ horizon]
    std::size_t n_paths = 10000;
    std::uint64_t seed = 0;
    SchemeKind scheme = SchemeKind::Boundary;
    double moment_order = 1.0;
    double clip_n = 0.0;
    bool second_order = false;
    unsigned threads = 0;
};

struct FlowConvergenceReport {
    std::vector<double> deltas;
    std::vector<double> sup_error_first;   // mean over paths of sup_t |(X^d - X)/d - xi|
    std::vector<double> sup_error_second;  // mean of sup_t |(X^d - 2X + X^-d)/d^2 - eta|
    std::vector<double> ratios_first;      // successive error ratios
    std::vector<double> ratios_second;
};

// Shared-noise check of the pathwise limits (X^d - X)/d -> xi and the
// second-order stencil -> eta (eta0 = 0) across the delta ladder.
FlowConvergenceReport flow_convergence(const ProblemSpec& spec, const DomainSpec& dom,
                                       const InteriorScheme* interior, const Vec& x,
                                       const Vec& xi0, const FlowOptions& opts);

}  // namespace qdb
