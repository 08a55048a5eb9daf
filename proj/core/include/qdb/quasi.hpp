#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qdb/sde.hpp"

namespace qdb {

// Per-step controls of the quasi-derivative pair: time change (r, r~),
// measure change (pi, pi~), rotation (P, P~). P and P~ are skew-symmetric by
// construction.
struct QuasiCoeffs {
    double r = 0.0;
    double r_tilde = 0.0;
    Vec pi;        // d1
    Vec pi_tilde;  // d1
    Mat P;         // d1 x d1
    Mat P_tilde;   // d1 x d1
};

enum class SchemeKind {
    Boundary,  // active on {delta1 < psi < lambda}, stops at its exit
    Interior,  // active on {psi > lambda^2}, stops at its exit
    Zero,      // all controls zero; stops only at the domain exit
};

enum class QuasiStop : std::uint8_t {
    Running = 0,
    RegionExit,
    DomainExit,
    Clipped,   // |xi| reached the localization level
    Capped,    // base path hit the horizon
    Flagged,   // non-finite state or singular normal diffusion
};

// Near-boundary coefficient maps. With A = sum_i psi_{(sigma_i)}^2:
//   rbar = -(1/A) sum_i psi_{(sigma_i)} (psi_{(sigma_i)})_{(y)}
//   r = rbar + psi_{(y)}/psi,      r~ = psi_{(y)}^2/psi^2
//   pi_i = 4p psi_{(sigma_i)} psi_{(y)} / (phi psi)
//   P_ij = [psi_{(sigma_j)} (psi_{(sigma_i)})_{(y)} - psi_{(sigma_i)} (psi_{(sigma_j)})_{(y)}] / A
// Throws when psi(x) is outside (delta1, lambda) or A <= 1e-10 (degenerate
// normal diffusion at x).
QuasiCoeffs boundary_scheme(const ProblemSpec& spec, const DomainSpec& dom, const Vec& x,
                            const Vec& xi, double moment_order = 1.0);

// Interior maps r = <rho, y>, pi = (M/2) sigma^T y, P = Q(x, y). When eta is
// given, the tilde fields are the same maps applied to eta. Throws when
// psi(x) <= lambda^2.
QuasiCoeffs interior_scheme(const ProblemSpec& spec, const DomainSpec& dom,
                            const InteriorScheme& scheme, const Vec& x, const Vec& xi,
                            const Vec* eta = nullptr);

struct QuasiOptions {
    SchemeKind scheme = SchemeKind::Interior;
    double moment_order = 1.0;  // p: selects the 4p factor of the boundary pi
    double clip_n = 0.0;        // localization level k_n; 0 disables
    bool evolve_eta = false;
    // When false, the second-order controls keep r~ from the scheme but set
    // pi~ = P~ = 0 (the difference-quotient runs use this variant).
    bool tilde_from_scheme = true;
    bool store = false;
};

// Evolves (xi, xi0) and optionally (eta, eta0) along one base path, the
// coefficients re-evaluated at every step and frozen within it. Drive it in
// lockstep with the base path: last_coeffs() belongs to the step just
// consumed. Once stopped the pair freezes; consumers extending the controls
// past the stop use zeros (running() tells them when).
class QuasiEvolver {
public:
    QuasiEvolver(const ProblemSpec& spec, const DomainSpec& dom, const InteriorScheme* interior,
                 const QuasiOptions& opts, Vec xi0, Vec eta0);

    // Region/localization gate on the pre-step state; marks the trajectory
    // stopped and returns false when x has left the scheme's region or |xi|
    // reached the clip level.
    bool precheck(std::size_t step_index, const Vec& x);

    // Consumes one base step (pre-step state x, increment dw). Coefficients
    // are evaluated at (x, xi) and frozen within the step.
    void consume(std::size_t step_index, const Vec& x, const Vec& dw, double h);

    // precheck + consume. Returns true while the trajectory is running.
    bool step(std::size_t step_index, const Vec& x, const Vec& dw, double h);

    // Marks the trajectory stopped for a base-path reason (domain exit, cap).
    void stop(QuasiStop reason, std::size_t step_index);

    bool running() const { return stop_ == QuasiStop::Running; }
    QuasiStop stop_reason() const { return stop_; }
    std::size_t stop_step() const { return stop_step_; }

    const Vec& xi() const { return xi_; }
    const Vec& eta() const { return eta_; }
    double xi0_adjoint() const { return xi0_adj_; }
    double eta0_adjoint() const { return eta0_adj_; }
    const QuasiCoeffs& last_coeffs() const { return coeffs_; }
    bool in_region(const Vec& x) const;

private:
    void evaluate_coeffs(const Vec& x);

    const ProblemSpec& spec_;
    const DomainSpec& dom_;
    const InteriorScheme* interior_;
    QuasiOptions opts_;
    Vec xi_, eta_;
    double xi0_adj_ = 0.0;       // integral of pi dW
    double eta0_adj_ = 0.0;      // (xi0)^2 - <xi0> + integral of pi~ dW
    double xi0_qv_ = 0.0;        // <xi0>_t = sum |pi|^2 h
    double eta0_mart_ = 0.0;     // integral of pi~ dW
    QuasiCoeffs coeffs_;
    QuasiStop stop_ = QuasiStop::Running;
    std::size_t stop_step_ = 0;
};

struct QuasiPathRecord {
    QuasiStop reason = QuasiStop::Running;
    std::size_t stop_step = 0;
    Vec xi_stop, eta_stop;
    double xi0_stop = 0.0, eta0_stop = 0.0;
    bool flagged = false;
};

struct QuasiTrajectoryStore {
    // per path, rows indexed by step (0..stop_step)
    std::vector<Mat> xi;
    std::vector<Mat> eta;
    std::vector<Vec> xi0;
    std::vector<Vec> eta0;
    std::vector<std::vector<QuasiCoeffs>> coeffs;
};

struct QuasiTrajectory {
    QuasiOptions opts;
    Vec xi0_init, eta0_init;
    std::vector<QuasiPathRecord> paths;
    std::optional<QuasiTrajectoryStore> store;
};

// xi along every path of the ensemble (eta left at zero).
QuasiTrajectory evolve_first(const PathEnsemble& ens, const ProblemSpec& spec,
                             const DomainSpec& dom, const InteriorScheme* interior,
                             const Vec& xi0, const QuasiOptions& opts);

// Re-runs the pair with eta evolved; scheme and xi0 are taken from xi_traj.
QuasiTrajectory evolve_second(const PathEnsemble& ens, const ProblemSpec& spec,
                              const DomainSpec& dom, const InteriorScheme* interior,
                              const QuasiTrajectory& xi_traj, const Vec& eta0);

// A scalar test function with Lv = 0 on D (membership in the martingale
// class is checked on samples before the statistic runs).
struct TestFunction {
    std::string name;
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> grad;
    std::function<Mat(const Vec&)> hess;
};

struct MartingaleRow {
    double t = 0.0;
    std::size_t n = 0;
    double mean_first = 0.0, se_first = 0.0, z_first = 0.0;
    double mean_second = 0.0, se_second = 0.0, z_second = 0.0;
};

struct MartingaleReport {
    std::string v_name;
    bool includes_second = false;
    double lv_residual = 0.0;
    double m0_first = 0.0, m0_second = 0.0;
    std::vector<MartingaleRow> rows;
    bool pass(double z_threshold = 3.0) const;
};

// Checkpoint means of the stopped processes
//   m1 = v_{(xi_t)}(X_t) + xi0_t v(X_t)
//   m2 = v_{(xi_t)(xi_t)}(X_t) + v_{(eta_t)}(X_t) + 2 xi0_t v_{(xi_t)}(X_t) + eta0_t v(X_t)
// against their t = 0 values, with z-scores of the drift. Throws when the
// sampled |Lv| residual exceeds lv_tol (v is then outside the tested class).
MartingaleReport martingale_statistic(const TestFunction& v, const PathEnsemble& ens,
                                      const ProblemSpec& spec, const DomainSpec& dom,
                                      const InteriorScheme* interior, const Vec& xi0,
                                      const QuasiOptions& opts,
                                      const std::vector<double>& checkpoints,
                                      double lv_tol = 1e-8);

// Largest stable Euler step for the boundary scheme: the pi feedback relaxes
// psi_{(xi)}/psi at rate ~ 4p A / (phi psi), stiffest at psi = delta1. A is
// estimated on a region grid.
double boundary_stable_h(const ProblemSpec& spec, const DomainSpec& dom, double moment_order,
                         double safety = 0.5);

}  // namespace qdb
