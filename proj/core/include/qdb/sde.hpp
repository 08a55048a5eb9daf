#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qdb/numeric.hpp"
#include "qdb/philox.hpp"
#include "qdb/problem.hpp"

namespace qdb {

// Supplies the Brownian increments. The default source derives every draw
// from (seed, path, step) with a counter-based generator, so ensembles are
// reproducible independently of scheduling; tests substitute table-backed
// sources for h-refinement studies on a shared Brownian path.
class NoiseSource {
public:
    virtual ~NoiseSource() = default;
    // Writes the d1 standard normals of (path, step) into out.
    virtual void standard_normals(std::uint64_t path, std::uint64_t step, Vec& out) const = 0;
};

class PhiloxNoise final : public NoiseSource {
public:
    explicit PhiloxNoise(std::uint64_t seed) : rng_(seed, RngStream::Increments) {}
    void standard_normals(std::uint64_t path, std::uint64_t step, Vec& out) const override {
        const auto n = out.size();
        for (Eigen::Index j = 0; j < n; j += 2) {
            const auto pair = rng_.normal_pair(path, step, static_cast<std::uint32_t>(j / 2));
            out[j] = pair[0];
            if (j + 1 < n) out[j + 1] = pair[1];
        }
    }

private:
    CounterRng rng_;
};

struct SimOptions {
    double h = 1e-3;
    double t_max = 0.0;  // horizon cap; 0 = pick 50 * sup psi
    std::size_t n_paths = 1;
    std::uint64_t seed = 0;
    bool store = false;        // keep full per-step states and increments
    bool refine_exit = true;   // bisect the crossing segment onto {psi = 0}
    unsigned threads = 0;      // 0 = hardware concurrency
};

struct PathSummary {
    std::int64_t exit_step = -1;   // first grid index with psi(X) <= 0; -1 when capped
    double exit_time = 0.0;        // exit_step * h (t_max when capped)
    double refined_exit_time = 0.0;
    Vec exit_state;                // crossing point on {psi = 0} (capped state when capped)
    bool capped = false;
};

struct PathStore {
    std::vector<Mat> states;      // per path, (n_steps + 1) x d
    std::vector<Mat> increments;  // per path, n_steps x d1
};

struct PathEnsemble {
    Vec x0;
    double h = 0.0;
    double t_max = 0.0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    int d = 0, d1 = 0;
    bool refine_exit = true;
    std::vector<PathSummary> paths;
    std::optional<PathStore> store;

    std::size_t cap_steps() const { return static_cast<std::size_t>(t_max / h + 0.5); }
    double capped_fraction() const;
};

// Euler-Maruyama to the first exit of D, with optional bisection refinement
// of the crossing point along the last step segment. Throws on x0 outside D
// or non-finite states (diagnostic names the path and step).
PathEnsemble simulate_ensemble(const ProblemSpec& spec, const DomainSpec& dom, const Vec& x0,
                               const SimOptions& opts);

// Streams one path of an ensemble step by step, regenerating increments from
// the ensemble's seed. The visitor sees each executed step through its
// pre-step state and increment; the recursion is identical to
// simulate_ensemble, so states match bit-exactly. Returning false aborts the
// replay early.
using StepVisitor = std::function<bool(std::size_t step, double t, const Vec& x, const Vec& dw,
                                       const Vec& x_next)>;
void replay_path(const ProblemSpec& spec, const DomainSpec& dom, const PathEnsemble& ens,
                 std::size_t path_id, const StepVisitor& visit);

struct ExitStatistics {
    SampleStats tau;           // refined exit times over non-capped paths
    double second_moment = 0.0;
    double second_moment_se = 0.0;
    double capped_fraction = 0.0;
    bool capped_warning = false;  // capped fraction above 1%, statistics biased low
    double psi_x0 = 0.0;
    double psi_sup = 0.0;
    bool mean_bound_pass = false;    // mean - 3 SE <= psi(x0)
    bool second_bound_pass = false;  // m2 - 3 SE <= 2 |psi|_0 psi(x0)
    std::string verdict;             // pass | fail | inconclusive
};

ExitStatistics exit_statistics(const PathEnsemble& ens, const DomainSpec& dom,
                               double psi_sup_hint = 0.0);

// Columnar binary serialization; layout documented in docs/formats.md.
void save_ensemble(const std::string& path, const PathEnsemble& ens);
PathEnsemble load_ensemble(const std::string& path);

namespace detail {
// One Euler-Maruyama update x_next = x + sigma(x) dw + b(x) h.
inline void euler_step(const ProblemSpec& spec, const Vec& x, const Vec& dw, double h, Vec& out) {
    out = x + spec.sigma(x) * dw + spec.b(x) * h;
}

// Bisection of psi = level on the segment x0 -> x1 (psi(x0) > level >= psi(x1)).
// Returns the crossing fraction s in [0,1] and writes the crossing point.
double bisect_level(const DomainSpec& dom, const Vec& x0, const Vec& x1, double level, Vec& out);
}  // namespace detail

}  // namespace qdb
