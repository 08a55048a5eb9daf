#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qdb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Coefficient data of the Dirichlet system
//   L u + f(x, u, grad(u) sigma) = 0 in D,  u = g on the boundary,
// with L = a_ij d2_ij + b_i d_i and a = sigma sigma^T / 2. Derivative
// callbacks are mandatory; directional derivatives follow the convention
// phi_{(y)} = sum_i d_i(phi) y_i and phi_{(y)(z)} = sum_ij d2_ij(phi) y_i z_j.
struct ProblemSpec {
    int d = 0;   // state dimension
    int d1 = 0;  // noise dimension
    int k = 1;   // system dimension

    std::function<Mat(const Vec&)> sigma;                              // d x d1
    std::function<Mat(const Vec&, const Vec&)> sigma_dir;              // sigma_{(y)}
    std::function<Mat(const Vec&, const Vec&, const Vec&)> sigma_dir2; // sigma_{(y)(z)}
    std::function<Vec(const Vec&)> b;                                  // d
    std::function<Vec(const Vec&, const Vec&)> b_dir;
    std::function<Vec(const Vec&, const Vec&, const Vec&)> b_dir2;

    // Driver f(x, y, z) in R^k, with y in R^k and z in R^{k x d1}. f_jac is
    // the full Jacobian [f_x | f_y | f_z] of size k x (d + k + k*d1); the z
    // block is flattened row-major.
    std::function<Vec(const Vec&, const Vec&, const Mat&)> f;
    std::function<Mat(const Vec&, const Vec&, const Mat&)> f_jac;

    std::function<Vec(const Vec&)> g;                                  // k
    std::function<Vec(const Vec&, const Vec&)> g_dir;
    std::function<Vec(const Vec&, const Vec&, const Vec&)> g_dir2;

    // Structural constants: monotonicity mu, Lipschitz L (in y) and L0 (in z),
    // exponent beta, vartheta with 2*vartheta = -2*mu + L0^2, and the bound K0.
    double mu = 0.0;
    double L = 0.0;
    double L0 = 0.0;
    double beta = 0.0;
    double vartheta = 0.0;
    double K0 = 0.0;

    Mat a(const Vec& x) const {
        const Mat s = sigma(x);
        return 0.5 * s * s.transpose();
    }

    // L phi for a scalar phi given its gradient and Hessian at x.
    double generator(const Vec& x, const Vec& grad, const Mat& hess) const {
        return (a(x) * hess).trace() + b(x).dot(grad);
    }
};

// Level-set description of the domain D = {psi > 0}; psi = 0 with
// |psi_x| >= 1 on the boundary and L psi <= -1 inside.
struct DomainSpec {
    std::function<double(const Vec&)> psi;
    std::function<Vec(const Vec&)> psi_grad;
    std::function<Mat(const Vec&)> psi_hess;

    double lambda = 0.3;   // region threshold, in (0,1)
    double delta1 = 0.01;  // inner threshold, in (0, lambda^2)

    Vec box_lo, box_hi;  // bounding box of D, used for grid sampling

    bool contains(const Vec& x) const { return psi(x) > 0.0; }

    void validate() const {
        if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("DomainSpec: lambda must lie in (0,1)");
        if (!(delta1 > 0.0 && delta1 < lambda * lambda))
            throw std::invalid_argument("DomainSpec: delta1 must lie in (0, lambda^2)");
        if (box_lo.size() == 0 || box_lo.size() != box_hi.size())
            throw std::invalid_argument("DomainSpec: bounding box required");
    }
};

// Interior-region control functions (rho, M, Q); Q(x, .) maps R^d linearly
// into skew-symmetric d1 x d1 matrices.
struct InteriorScheme {
    std::function<Vec(const Vec&)> rho;
    std::function<double(const Vec&)> M;
    std::function<Mat(const Vec&, const Vec&)> Q;
};

// Grid estimates of the coefficient norms. Suprema are estimated by maxima
// over sample grids, so every entry is a lower bound of the true value.
struct NormReport {
    double g0 = 0.0;        // |g|_0
    double g1 = 0.0;        // |g|_1
    double g2 = 0.0;        // |g|_2
    double g_lip0 = 0.0;    // [g]_{0,1}
    double g_lip1 = 0.0;    // [g]_{1,1}
    double g01 = 0.0;       // |g|_{0,1} = |g|_0 + [g]_{0,1}
    double g11 = 0.0;       // |g|_{1,1} = |g|_1 + [g]_{1,1}
    double f00 = 0.0;       // |f(.,0,0)|_0
    double f_lip_x = 0.0;   // [f]_{0,1,x}
    double f01 = 0.0;       // ||f(.)||_{0,1} = |f(.,0,0)|_0 + [f]_{0,1,x}
    double f11 = 0.0;       // [f]_{1,1}
    int grid_resolution = 0;
    bool lower_bound_estimates = true;
};

struct NormConfig {
    int resolution = 16;          // grid points per axis, >= 8
    double yz_box_halfwidth = 10; // (y,z) sampling box per coordinate
    int yz_samples = 8;           // (y,z) draws for the f seminorms
    std::size_t pair_budget = 1000000;  // max point pairs per seminorm
    std::uint64_t seed = 1;       // subsampling stream
};

struct HypothesisCheck {
    std::string name;
    bool pass = false;
    double margin = 0.0;  // signed; <= 0 means pass for one-sided checks
    Vec witness;
    std::string detail;
};

struct HypothesisReport {
    HypothesisCheck h2;  // L psi + 1 <= 0 on the grid
    HypothesisCheck h3;  // |sigma|_2 + |b|_2 + |psi|_2 <= K0 (psi to 2nd order only)
    HypothesisCheck h9;  // <a n, n> > 0 at boundary samples
    bool all_pass() const { return h2.pass && h3.pass && h9.pass; }
};

struct H7Report {
    bool pass = false;
    bool mu_window = false;        // 0 < mu < L
    bool beta_window = false;      // -mu + 2 L0^2 < 2 beta < 0
    bool vartheta_consistent = false;  // 2 vartheta = -2 mu + L0^2 within 1e-12
    double beta_lo = 0.0, beta_hi = 0.0;
    std::string detail;
};

struct H10Report {
    bool pass = false;
    double worst_margin = 0.0;  // max over samples of LHS - RHS
    std::size_t worst_index = 0;
};

// Cross-validates every derivative callback against central finite
// differences of its base callback at the given interior points. Throws
// std::runtime_error naming the callback and point on mismatch beyond
// rel_tol. This gate runs at spec load; silently wrong derivatives would
// corrupt every downstream quasi-derivative computation.
void validate_derivative_callbacks(const ProblemSpec& spec, const DomainSpec& dom,
                                   const std::vector<Vec>& points, double rel_tol = 1e-5);

// (H2), (H3), (H9) on a sample grid; boundary points for (H9) are found by
// bisecting rays from an interior anchor.
HypothesisReport validate_hypotheses(const ProblemSpec& spec, const DomainSpec& dom,
                                     const std::vector<Vec>& grid);

H7Report check_h7(double mu, double L, double L0, double beta, double vartheta);

// Evaluates (LHS - RHS) of the (H10)_p inequality
//   2p(4p-1) ||sigma_{(y)} + <rho,y> sigma + sigma Q(x,y)||^2
//     + 4p <y, b_{(y)} + 2 <rho,y> b>
//   <= (-4p beta - 1) + 2p M(x) <a(x) y, y>
// over samples of (x, y) with |y| = 1.
H10Report check_h10(const ProblemSpec& spec, const DomainSpec& dom, const InteriorScheme& scheme,
                    double p, double beta, const std::vector<std::pair<Vec, Vec>>& samples);

NormReport compute_norms(const ProblemSpec& spec, const DomainSpec& dom, const NormConfig& config);

// Axis-aligned grid over the bounding box filtered to {psi > 0}
// (or {psi >= 0} when include_boundary).
std::vector<Vec> sample_interior_grid(const DomainSpec& dom, int resolution,
                                      bool include_boundary = false);

// n points with psi >= level, within a ray-parameter bracket of width tol
// (tol = 0 bisects to machine precision), found by bisecting from an
// interior anchor along deterministic directions.
std::vector<Vec> sample_level_set(const DomainSpec& dom, double level, int n, double tol = 0.0);

// Grid maximum of psi over D (lower bound of |psi|_0).
double psi_sup_estimate(const DomainSpec& dom, int resolution = 64);

}  // namespace qdb
