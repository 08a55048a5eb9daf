#pragma once

// Internal lockstep driver shared by the quasi, barrier, and perturbed
// implementations. Streams one base path and advances a QuasiEvolver along
// it, with hooks before each consumed step and once at the stopping time.

#include "qdb/quasi.hpp"
#include "qdb/sde.hpp"

namespace qdb::detail {

// at_state(step, x, ev): the running pair (X_i, xi_i) at time i*h, called
//   before the step is consumed (so ev exposes the time-i values).
// at_stop(step, x_stop, ev): called exactly once with the stopped state. For
//   a region exit or clip, x_stop is the first offending pre-step state; for
//   a domain exit it is the raw crossed state; for a cap, the final state.
template <class AtState, class AtStop>
void drive_quasi_path(const ProblemSpec& spec, const DomainSpec& dom,
                      const InteriorScheme* interior, const PathEnsemble& ens,
                      std::size_t path_id, const Vec& xi0, const Vec& eta0,
                      const QuasiOptions& opts, AtState&& at_state, AtStop&& at_stop) {
    QuasiEvolver ev(spec, dom, interior, opts, xi0, eta0);
    Vec last_state = ens.x0;
    bool stop_emitted = false;
    replay_path(spec, dom, ens, path_id,
                [&](std::size_t i, double, const Vec& x, const Vec& dw, const Vec& x_next) {
                    if (!ev.precheck(i, x)) {
                        at_stop(i, x, ev);
                        stop_emitted = true;
                        return false;
                    }
                    at_state(i, x, ev);
                    ev.consume(i, x, dw, ens.h);
                    if (!ev.running()) {
                        at_stop(i + 1, x_next, ev);
                        stop_emitted = true;
                        return false;
                    }
                    last_state = x_next;
                    return true;
                });
    if (!stop_emitted) {
        const PathSummary& ps = ens.paths[path_id];
        const std::size_t end_step =
            ps.capped ? ens.cap_steps() : static_cast<std::size_t>(ps.exit_step);
        ev.stop(ps.capped ? QuasiStop::Capped : QuasiStop::DomainExit, end_step);
        at_stop(end_step, last_state, ev);
    }
}

}  // namespace qdb::detail
