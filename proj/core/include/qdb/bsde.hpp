#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qdb/sde.hpp"

namespace qdb {

enum class BsdeMethod { DriverFree, Picard };

struct BsdeStore {
    // Per path: y[p] is (n_slices_p x k); z[p] is (n_slices_p x k*d1),
    // rows indexed by the absolute time grid up to the path's terminal slice.
    std::vector<Mat> y;
    std::vector<Mat> z;
};

struct BsdeSolution {
    Vec y0;    // R^k point estimate at x0
    Vec ci95;  // per-component half-width
    BsdeMethod method = BsdeMethod::DriverFree;
    int iterations = 0;
    double residual = 0.0;  // sup-norm change of Y0 in the last sweep
    bool converged = true;
    bool h7_ok = true;           // contraction condition; runs are flagged, not refused
    double capped_bias_bound = 0.0;  // |g|_0-scale bound times the capped fraction
    std::optional<BsdeStore> store;
    // Per-path regression targets of slice 0 (their mean is y0); the
    // difference-quotient estimators couple perturbed and base solves
    // through these.
    std::vector<Vec> y0_samples;
};

// Exact Monte Carlo for drivers without (y, z) dependence:
//   Y0 = mean over paths of [ g(X_tau) + sum_i f(X_i) dt_i ].
// Refuses (std::invalid_argument) when f has nonzero (y,z) partials at probe
// points, directing the caller to solve_picard.
BsdeSolution estimate_u_driver_free(const PathEnsemble& ens, const ProblemSpec& spec,
                                    const DomainSpec& dom);

struct PicardOptions {
    int max_iter = 8;
    double tol = 1e-4;
    int basis_degree = 3;
    bool basis_include_psi = true;
    bool basis_include_g = true;
    bool store_solution = true;
    // Optional replacement of the driver used in the backward recursion;
    // receives the path and slice indices, state, previous-iterate Y and the
    // regressed martingale coefficient Ztilde (k x d1). The default
    // evaluates f(x, y, ztilde). The perturbed module injects its
    // time-changed driver here.
    std::function<Vec(std::size_t path, std::size_t step, const Vec& x, const Vec& y,
                      const Mat& ztilde)>
        driver;
    // Optional per-step weight applied to the continuation value in the
    // regression target (a conditional change of measure); default 1.
    std::function<double(std::size_t path, std::size_t step)> target_weight;
};

// Backward least-squares regression solver for the random-horizon BSDE on
// the absolute time grid, iterated in Picard fashion: the (y, z) arguments of
// the driver come from the previous sweep's fitted functions. Requires a
// stored ensemble.
BsdeSolution solve_picard(const PathEnsemble& ens, const ProblemSpec& spec, const DomainSpec& dom,
                          const PicardOptions& opts = {});

struct MBetaNorms {
    double y_norm = 0.0;  // E[int_0^tau e^{2 beta s} |Y_s|^2 ds]^(1/2)
    double z_norm = 0.0;
};

// Discrete quadrature of the defining integrals over the stored solution.
MBetaNorms mbeta_norm(const BsdeSolution& solution, const PathEnsemble& ens, double beta);

// Per-path terminal-plus-integral values g(X_tau) + int f(X_s) ds used by the
// driver-free estimator (f evaluated at (x, 0, 0)).
std::vector<Vec> driver_free_path_values(const PathEnsemble& ens, const ProblemSpec& spec,
                                         const DomainSpec& dom);

// Default regression features: monomials in x up to total degree `degree`,
// plus psi(x) and the components of g(x).
std::vector<std::function<double(const Vec&)>> make_default_basis(const ProblemSpec& spec,
                                                                  const DomainSpec& dom,
                                                                  int degree,
                                                                  bool include_psi,
                                                                  bool include_g);

}  // namespace qdb
