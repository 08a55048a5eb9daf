#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qdb/quasi.hpp"
#include "qdb/sde.hpp"

namespace qdb {

// Barrier families. B1/B3 live on the near-boundary region and pair with the
// boundary scheme; B2/B4 are the interior ones. General2pMinus1/General2p are
// the arbitrary-moment-order versions (p = 1 gives B1/B2, p = 2 gives B3/B4).
enum class BarrierKind {
    B1,
    B2,
    B3,
    B4,
    General2pMinus1,
    General2p,
};

struct BarrierSpec {
    BarrierKind kind = BarrierKind::B1;
    double lambda = 0.3;
    double K1 = 1.0;  // constant in [1, inf)
    double p = 1.0;   // moment order for the general kinds

    double moment_order() const;
    bool is_boundary_kind() const;
    void validate() const;
};

struct BarrierValue {
    double value = 0.0;
    double phi = 0.0;  // phi(x) = lambda^2 + psi - psi^2/(4 lambda), when defined
};

// Exact formula evaluation:
//   B_{2p-1}(x,y) = (lambda + sqrt(psi) + psi) |y|^{4p}
//                   + K1 phi^{(8p-1)/2} psi_{(y)}^{4p} / psi^{4p-1}
//   B_{2p}(y)     = lambda^{3/4} |y|^{4p}
// Interior kinds ignore x. Throws a domain error when an x-dependent kind is
// evaluated at psi(x) <= 0.
BarrierValue eval_barrier(const BarrierSpec& bspec, const DomainSpec& dom, const Vec& x,
                          const Vec& y);

struct OrderingReport {
    bool pass = false;
    // Signed margins; >= 0 is a pass.
    double worst_margin_on_lambda = 0.0;   // min of B1 - 4 B2 on {psi = lambda}
    double worst_margin_on_lambda2 = 0.0;  // min of B2 - 4 B1 on {psi = lambda^2}
    Vec witness_lambda, witness_lambda2;
    Vec witness_dir_lambda, witness_dir_lambda2;
};

// Deterministic check of B1 >= 4 B2 on {psi = lambda} and 4 B1 <= B2 on
// {psi = lambda^2} over the sample x level-set points (each stated level,
// within 1e-6) and the direction panel.
OrderingReport ordering_check(const DomainSpec& dom, const BarrierSpec& b1_spec,
                              const std::vector<Vec>& samples_on_lambda,
                              const std::vector<Vec>& samples_on_lambda2,
                              const std::vector<Vec>& y_panel);

struct PhiBoundsReport {
    bool pass = false;
    double worst_low = 0.0;   // min over samples of phi - lambda^2
    double worst_high = 0.0;  // min over samples of 2 lambda - phi
    double worst_psi = 0.0;   // min over samples of 2 phi - psi
};

// lambda^2 <= phi <= 2 lambda and psi <= 2 phi over {0 < psi < lambda}.
PhiBoundsReport phi_bounds_check(const DomainSpec& dom, double lambda,
                                 const std::vector<Vec>& samples);

struct LambdaCalibration {
    double lambda = 0.0;
    int halvings = 0;
    bool ok = false;
    OrderingReport ordering;
    PhiBoundsReport phi_bounds;
};

// Halves lambda from lambda_start until ordering_check and phi_bounds_check
// both pass (deterministic; the lemma is asymptotic in lambda).
LambdaCalibration calibrate_ordering_lambda(const DomainSpec& dom, double K1,
                                            double lambda_start = 0.3, int level_samples = 100,
                                            int y_panel_size = 8, int max_halvings = 40);

struct SupermartingaleOptions {
    std::size_t n_paths = 100000;
    double h = 1e-3;
    double t_max = 0.0;  // 0 = 50 sup psi
    std::uint64_t seed = 0;
    double clip_n = 1000.0;  // localization level (the statements are about localized processes)
    unsigned threads = 0;
};

struct SupermartingaleRow {
    double t = 0.0;
    std::size_t n = 0;
    double mean = 0.0, se = 0.0, z = 0.0;          // discounted barrier at the stopped time
    double mean_sqrt = 0.0, se_sqrt = 0.0, z_sqrt = 0.0;
};

struct SupermartingaleReport {
    BarrierSpec bspec;
    SchemeKind scheme = SchemeKind::Interior;
    Vec x0, xi0;
    double b0 = 0.0;       // B(x0, xi0)
    double b0_sqrt = 0.0;  // sqrt(B(x0, xi0))
    std::vector<SupermartingaleRow> rows;
    double moment_integral_mean = 0.0;  // E int_0^{tau_1} (|xi|^{4p} + (psi_{(xi)}/psi)^{4p}) dt
    double moment_integral_se = 0.0;
    double clip_rate = 0.0;
    double flagged_rate = 0.0;
    bool pass_base = false;
    bool pass_sqrt = false;
    bool pass(double z_threshold = 3.0) const;
};

// One-sided z-test of E[discount * B(X_{t ^ stop}, xi_{t ^ stop})] <= B(x0, xi0)
// at each checkpoint, with the discount tied to the kind (none for the
// boundary barriers; e^{4p beta t} for the interior ones, square roots at
// half rate). The base and sqrt variants are tested jointly so a failure of
// only the sqrt one is visible. Throws on a mismatched scheme/barrier
// pairing.
SupermartingaleReport supermartingale_test(const BarrierSpec& bspec, const ProblemSpec& spec,
                                           const DomainSpec& dom, const InteriorScheme* interior,
                                           const Vec& x0, const Vec& xi0,
                                           const std::vector<double>& checkpoints,
                                           const SupermartingaleOptions& opts);

struct BarrierConstants {
    double lambda_sm = 0.0;  // region threshold used for the statistical runs
    double delta1 = 0.0;
    double K1 = 1.0;
    bool ok = false;
    int lambda_halvings = 0;
    int k1_doublings = 0;
};

// Pilot calibration of (lambda, K1) for the supermartingale runs: halve
// lambda from lambda_start and double K1 from 1 until the pilot B1 test
// passes, then freeze. Confirmation runs must use fresh seeds.
BarrierConstants calibrate_supermartingale_constants(const ProblemSpec& spec,
                                                     const DomainSpec& dom,
                                                     const InteriorScheme* interior,
                                                     double psi_of_x0_fraction,
                                                     const SupermartingaleOptions& pilot_opts,
                                                     double lambda_start = 0.3,
                                                     int max_halvings = 6, int max_doublings = 6);

}  // namespace qdb
