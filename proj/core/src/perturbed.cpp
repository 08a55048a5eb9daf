#include "qdb/perturbed.hpp"

#include <cmath>
#include <sstream>

#include "qdb/numeric.hpp"
#include "quasi_drive.hpp"

namespace qdb {

namespace {

struct JobSpec {
    double delta = 0.0;  // positive magnitude
    int sign = +1;
    bool second_order = false;
    Vec eta0;
};

struct JobState {
    Vec x;
    bool alive = true;
    bool exited = false;
    bool capped = false;
    bool guard_violated = false;
    double tau = 0.0;
    Vec exit_state;
    Vec terminal_g;
    Vec driver_integral;
    double log_weight = 0.0;
    // populated only when collect_store is set
    std::vector<Vec> states;
    std::vector<double> factors;
    std::vector<double> dlogw;
};

// Runs the coupled system (base path, quasi pair, one X^delta per job) on the
// shared increments of one base path. The controls of step i come from the
// base pair (X_i, xi_i), frozen within the step and zero once the quasi
// trajectory stops. post_step fires after base and jobs advanced to time
// (i+1) h.
template <class PostStep>
void run_coupled_path(const ProblemSpec& spec, const DomainSpec& dom,
                      const InteriorScheme* interior, const PathEnsemble& ens,
                      std::size_t path_id, const QuasiOptions& qopts, const Vec& xi0,
                      const std::vector<JobSpec>& jobs, std::vector<JobState>& job_states,
                      bool collect_store, bool continue_past_region, PostStep&& post_step) {
    const int d1 = spec.d1;
    const double h = ens.h;
    const double sqrt_h = std::sqrt(h);
    const std::size_t cap = ens.cap_steps();
    const PhiloxNoise noise(ens.seed);

    Vec eta0 = Vec::Zero(spec.d);
    for (const auto& j : jobs)
        if (j.second_order && j.eta0.size()) eta0 = j.eta0;
    QuasiEvolver ev(spec, dom, interior, qopts, xi0, eta0);
    // After a region exit the controls are extended by zero; the pair itself
    // keeps evolving as a quasi-derivative with vanishing controls when the
    // caller asks for it (flow-convergence comparisons need the continued xi).
    std::optional<QuasiEvolver> continuation;

    job_states.assign(jobs.size(), JobState{});
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const double sd = jobs[j].sign * jobs[j].delta;
        Vec start = ens.x0 + sd * xi0;
        if (jobs[j].second_order && jobs[j].eta0.size())
            start += 0.5 * jobs[j].delta * jobs[j].delta * jobs[j].eta0;
        JobState& js = job_states[j];
        js.x = start;
        js.driver_integral = Vec::Zero(spec.k);
        if (!(dom.psi(js.x) > 0.0)) {
            js.alive = false;
            js.exited = true;
            js.tau = 0.0;
            js.exit_state = js.x;
            js.terminal_g = spec.g(js.x);
        }
    }

    const Vec f_y0 = Vec::Zero(spec.k);
    const Mat f_z0 = Mat::Zero(spec.k, d1);
    const Mat eye = Mat::Identity(d1, d1);
    const QuasiCoeffs zero_coeffs{0.0, 0.0, Vec::Zero(d1), Vec::Zero(d1), Mat::Zero(d1, d1),
                                  Mat::Zero(d1, d1)};

    Vec x_base = ens.x0;
    bool base_alive = true;
    Vec z(d1), dw(d1), xp_next(spec.d), crossing(spec.d);

    for (std::size_t i = 0; i < cap; ++i) {
        bool any_alive = false;
        for (const auto& js : job_states) any_alive |= js.alive;
        if (!any_alive) break;

        noise.standard_normals(path_id, i, z);
        dw = sqrt_h * z;

        const QuasiCoeffs* coeffs = &zero_coeffs;
        if (base_alive && !continuation && ev.running() && ev.precheck(i, x_base)) {
            ev.consume(i, x_base, dw, h);
            if (ev.running()) coeffs = &ev.last_coeffs();
        }
        if (continue_past_region && !continuation && !ev.running() &&
            ev.stop_reason() == QuasiStop::RegionExit) {
            QuasiOptions zopts = qopts;
            zopts.scheme = SchemeKind::Zero;
            continuation.emplace(spec, dom, nullptr, zopts, ev.xi(), ev.eta());
        }
        if (base_alive && continuation && continuation->running() &&
            continuation->precheck(i, x_base))
            continuation->consume(i, x_base, dw, h);

        for (std::size_t j = 0; j < jobs.size(); ++j) {
            JobState& js = job_states[j];
            if (!js.alive) continue;
            const double sd = jobs[j].sign * jobs[j].delta;
            const double d2 = jobs[j].delta * jobs[j].delta;
            const double r_tilde = jobs[j].second_order ? coeffs->r_tilde : 0.0;
            const double factor = 1.0 + 2.0 * sd * coeffs->r + d2 * r_tilde;
            Vec theta = sd * coeffs->pi;
            if (jobs[j].second_order) theta += 0.5 * d2 * coeffs->pi_tilde;
            if (!(factor >= 0.0 && factor <= 2.0) || theta.norm() > 1.0)
                js.guard_violated = true;
            // Guard-violating paths continue under frozen (zero) controls so
            // they stay well defined; callers exclude them and shrink delta.
            const double eff_factor = js.guard_violated ? 1.0 : factor;
            const Vec eff_theta = js.guard_violated ? Vec(Vec::Zero(d1)) : theta;
            Mat rot = eye;
            if (!js.guard_violated) {
                if (coeffs->P.squaredNorm() > 0.0) rot = expm_skew(sd * coeffs->P);
                if (jobs[j].second_order && coeffs->P_tilde.squaredNorm() > 0.0)
                    rot = rot * expm_skew(0.5 * d2 * coeffs->P_tilde);
            }

            const Mat a_mat = std::sqrt(eff_factor) * spec.sigma(js.x) * rot;
            const Vec drift = eff_factor * spec.b(js.x) - a_mat * eff_theta;
            xp_next = js.x + a_mat * dw + drift * h;
            if (!xp_next.allFinite()) {
                std::ostringstream os;
                os << "simulate_perturbed: non-finite state on path " << path_id << " at step "
                   << i + 1;
                throw std::runtime_error(os.str());
            }
            const double dlw = eff_theta.dot(dw) - 0.5 * eff_theta.squaredNorm() * h;
            js.log_weight += dlw;
            if (collect_store) {
                js.factors.push_back(eff_factor);
                js.dlogw.push_back(dlw);
            }

            if (dom.psi(xp_next) <= 0.0) {
                const double s = detail::bisect_level(dom, js.x, xp_next, 0.0, crossing);
                js.exited = true;
                js.tau = (static_cast<double>(i) + s) * h;
                js.exit_state = crossing;
                js.terminal_g = spec.g(crossing);
                js.driver_integral +=
                    eff_factor * spec.f(js.x, f_y0, f_z0) * (js.tau - static_cast<double>(i) * h);
                js.alive = false;
            } else {
                js.driver_integral += eff_factor * spec.f(js.x, f_y0, f_z0) * h;
                js.x = xp_next;
                if (collect_store) js.states.push_back(js.x);
            }
        }

        if (base_alive) {
            Vec xb_next(spec.d);
            detail::euler_step(spec, x_base, dw, h, xb_next);
            if (dom.psi(xb_next) <= 0.0) {
                base_alive = false;
                if (ev.running()) ev.stop(QuasiStop::DomainExit, i + 1);
            } else {
                x_base = xb_next;
            }
        }
        post_step(i, x_base, base_alive, continuation ? *continuation : ev);
    }
    for (auto& js : job_states) {
        if (js.alive) {
            js.capped = true;
            js.tau = static_cast<double>(cap) * h;
            js.exit_state = js.x;
            js.terminal_g = spec.g(js.x);
            js.alive = false;
        }
    }
}

}  // namespace

PerturbationRun simulate_perturbed(const PathEnsemble& ens, const ProblemSpec& spec,
                                   const DomainSpec& dom, const InteriorScheme* interior,
                                   const QuasiTrajectory& traj, double delta, int sign,
                                   const PerturbOptions& popts) {
    if (!(delta >= 0.0)) throw std::invalid_argument("simulate_perturbed: delta must be >= 0");
    PerturbationRun run;
    run.delta = delta;
    run.sign = sign;
    run.start_shift = ens.x0 + sign * delta * traj.xi0_init;
    if (popts.second_order && popts.eta0.size())
        run.start_shift += 0.5 * delta * delta * popts.eta0;
    run.paths.resize(ens.n_paths);
    run.weight.resize(ens.n_paths);
    run.driver_integral.resize(ens.n_paths);
    run.terminal_g.resize(ens.n_paths);
    run.guard_violated.assign(ens.n_paths, 0);
    if (popts.store) {
        run.store.emplace();
        run.store->states.resize(ens.n_paths);
        run.store->increments.resize(ens.n_paths);
        run.controls.resize(ens.n_paths);
    }

    JobSpec job;
    job.delta = delta;
    job.sign = sign;
    job.second_order = popts.second_order;
    job.eta0 = popts.eta0;
    QuasiOptions qopts = traj.opts;
    qopts.evolve_eta = popts.second_order;
    if (popts.second_order) qopts.tilde_from_scheme = false;

    parallel_for(
        ens.n_paths,
        [&](std::size_t p) {
            std::vector<JobState> states;
            run_coupled_path(spec, dom, interior, ens, p, qopts, traj.xi0_init, {job}, states,
                             popts.store, false,
                             [](std::size_t, const Vec&, bool, const QuasiEvolver&) {});
            JobState& js = states.front();
            PathSummary ps;
            ps.capped = js.capped;
            ps.exit_step = js.capped ? -1 : static_cast<std::int64_t>(js.tau / ens.h) + 1;
            ps.exit_time = js.tau;
            ps.refined_exit_time = js.tau;
            ps.exit_state = js.exit_state;
            run.paths[p] = ps;
            run.weight[p] = std::exp(js.log_weight);
            run.driver_integral[p] = js.driver_integral;
            run.terminal_g[p] = js.terminal_g;
            run.guard_violated[p] = js.guard_violated ? 1 : 0;
            if (popts.store) {
                const auto n_states = js.states.size();
                Mat sm(static_cast<Eigen::Index>(n_states + 1), spec.d);
                sm.row(0) = run.start_shift.transpose();
                for (std::size_t i = 0; i < n_states; ++i)
                    sm.row(static_cast<Eigen::Index>(i + 1)) = js.states[i].transpose();
                Mat cm(static_cast<Eigen::Index>(js.factors.size()), 2);
                for (std::size_t i = 0; i < js.factors.size(); ++i) {
                    cm(static_cast<Eigen::Index>(i), 0) = js.factors[i];
                    cm(static_cast<Eigen::Index>(i), 1) = js.dlogw[i];
                }
                const PhiloxNoise noise(ens.seed);
                Mat im(static_cast<Eigen::Index>(js.factors.size()), spec.d1);
                Vec zrow(spec.d1);
                for (std::size_t i = 0; i < js.factors.size(); ++i) {
                    noise.standard_normals(p, i, zrow);
                    im.row(static_cast<Eigen::Index>(i)) = std::sqrt(ens.h) * zrow.transpose();
                }
                run.store->states[p] = std::move(sm);
                run.store->increments[p] = std::move(im);
                run.controls[p] = std::move(cm);
            }
        },
        popts.threads);

    std::size_t n_guard = 0;
    for (auto g : run.guard_violated) n_guard += g;
    run.guard_violation_rate = static_cast<double>(n_guard) / static_cast<double>(ens.n_paths);
    if (run.guard_violation_rate > 0.5) {
        std::ostringstream os;
        os << "simulate_perturbed: smallness guards failed on " << 100.0 * run.guard_violation_rate
           << "% of paths at delta = " << delta << "; shrink delta";
        throw std::runtime_error(os.str());
    }
    return run;
}

namespace {

// Wraps a stored perturbation run as an ensemble the regression solver can
// consume: perturbed states with the base increments.
PathEnsemble make_perturbed_ensemble(const PathEnsemble& base, const PerturbationRun& run) {
    PathEnsemble pe;
    pe.x0 = run.start_shift;
    pe.h = base.h;
    pe.t_max = base.t_max;
    pe.n_paths = base.n_paths;
    pe.seed = base.seed;
    pe.d = base.d;
    pe.d1 = base.d1;
    pe.refine_exit = base.refine_exit;
    pe.paths = run.paths;
    pe.store.emplace();
    pe.store->states = run.store->states;
    pe.store->increments = run.store->increments;
    return pe;
}

std::string monotonicity_verdict(const std::vector<Vec>& quotients, const std::vector<Vec>& ses) {
    if (quotients.size() < 3) return "converged";
    for (Eigen::Index c = 0; c < quotients.front().size(); ++c) {
        for (std::size_t i = 0; i + 2 < quotients.size(); ++i) {
            const double d1 = std::abs(quotients[i + 1][c] - quotients[i][c]);
            const double d2 = std::abs(quotients[i + 2][c] - quotients[i + 1][c]);
            const double slack = 2.0 * (ses[i][c] + ses[i + 1][c] + ses[i + 2][c]);
            if (d2 > d1 + slack) return "non-monotone";
        }
    }
    return "converged";
}

std::vector<Vec> picard_path_values(const PathEnsemble& ens, const ProblemSpec& spec,
                                    const DomainSpec& dom, const PicardOptions& base_opts,
                                    const PerturbationRun* run) {
    PicardOptions opts = base_opts;
    opts.store_solution = false;
    if (run != nullptr) {
        const auto& controls = run->controls;
        opts.driver = [&spec, &controls](std::size_t p, std::size_t step, const Vec& x,
                                         const Vec& y, const Mat& ztilde) {
            const double factor = controls[p](static_cast<Eigen::Index>(step), 0);
            // The z argument of f should be Z^delta = Ztilde rot^-1 / sqrt(factor);
            // the rotation is omitted here, exact for z-independent drivers.
            return Vec(spec.f(x, y, ztilde) * factor);
        };
        opts.target_weight = [&controls](std::size_t p, std::size_t step) {
            return std::exp(controls[p](static_cast<Eigen::Index>(step), 1));
        };
    }
    const BsdeSolution sol = solve_picard(ens, spec, dom, opts);
    return sol.y0_samples;
}

QuotientReport difference_quotients(const ProblemSpec& spec, const DomainSpec& dom,
                                    const InteriorScheme* interior, const Vec& x, const Vec& xi0,
                                    const EstimatorOptions& opts, bool second_order) {
    if (opts.deltas.size() < 3)
        throw std::invalid_argument("difference quotient estimator: need at least 3 deltas");
    if (!(dom.psi(x) > dom.delta1))
        throw std::invalid_argument("difference quotient estimator: psi(x) must exceed delta1");

    double delta_min = opts.deltas.front();
    for (double dte : opts.deltas) delta_min = std::min(delta_min, dte);
    double h = std::min(opts.h, 0.8 * delta_min * delta_min);
    if (opts.scheme == SchemeKind::Boundary)
        h = std::min(h, boundary_stable_h(spec, dom, opts.moment_order));

    const bool picard = opts.method == BsdeMethod::Picard;

    SimOptions sim;
    sim.h = h;
    sim.t_max = opts.t_max;
    sim.n_paths = opts.n_paths;
    sim.seed = opts.seed;
    sim.threads = opts.threads;
    sim.store = picard;
    const PathEnsemble ens = simulate_ensemble(spec, dom, x, sim);

    const int k = spec.k;
    const std::size_t n_deltas = opts.deltas.size();
    std::vector<std::vector<std::vector<double>>> q(
        n_deltas, std::vector<std::vector<double>>(k, std::vector<double>(ens.n_paths, 0.0)));
    std::vector<unsigned char> masked(ens.n_paths, 0);
    std::vector<unsigned char> capped_any(ens.n_paths, 0);
    for (std::size_t p = 0; p < ens.n_paths; ++p)
        if (ens.paths[p].capped) capped_any[p] = 1;

    QuasiOptions qopts;
    qopts.scheme = opts.scheme;
    qopts.moment_order = opts.moment_order;
    qopts.clip_n = opts.clip_n;
    qopts.evolve_eta = second_order;
    qopts.tilde_from_scheme = false;

    if (!picard) {
        const auto base_values = driver_free_path_values(ens, spec, dom);
        std::vector<JobSpec> jobs;
        for (double dlt : opts.deltas) {
            JobSpec jp;
            jp.delta = dlt;
            jp.sign = +1;
            jp.second_order = second_order;
            jp.eta0 = second_order ? Vec(Vec::Zero(spec.d)) : Vec();
            jobs.push_back(jp);
            if (second_order) {
                jp.sign = -1;
                jobs.push_back(jp);
            }
        }
        parallel_for(
            ens.n_paths,
            [&](std::size_t p) {
                std::vector<JobState> states;
                run_coupled_path(spec, dom, interior, ens, p, qopts, xi0, jobs, states, false,
                                 false,
                                 [](std::size_t, const Vec&, bool, const QuasiEvolver&) {});
                for (const auto& js : states) {
                    if (js.guard_violated) masked[p] = 1;
                    if (js.capped) capped_any[p] = 1;
                }
                if (masked[p]) return;
                for (std::size_t di = 0; di < n_deltas; ++di) {
                    const double dlt = opts.deltas[di];
                    if (!second_order) {
                        const JobState& js = states[di];
                        const Vec val =
                            std::exp(js.log_weight) * (js.terminal_g + js.driver_integral);
                        for (int c = 0; c < k; ++c)
                            q[di][c][p] = (val[c] - base_values[p][c]) / dlt;
                    } else {
                        const JobState& plus = states[2 * di];
                        const JobState& minus = states[2 * di + 1];
                        const Vec vp =
                            std::exp(plus.log_weight) * (plus.terminal_g + plus.driver_integral);
                        const Vec vm =
                            std::exp(minus.log_weight) * (minus.terminal_g + minus.driver_integral);
                        for (int c = 0; c < k; ++c)
                            q[di][c][p] = (vp[c] - 2.0 * base_values[p][c] + vm[c]) / (dlt * dlt);
                    }
                }
            },
            opts.threads);
    } else {
        // Regression route: solve the base and each perturbed BSDE with the
        // weighted time-changed driver, coupling through the slice-0 targets.
        const auto base_values = picard_path_values(ens, spec, dom, opts.picard, nullptr);
        QuasiTrajectory traj;
        traj.opts = qopts;
        traj.xi0_init = xi0;
        traj.eta0_init = Vec::Zero(spec.d);
        PerturbOptions popts;
        popts.second_order = second_order;
        popts.eta0 = second_order ? Vec(Vec::Zero(spec.d)) : Vec();
        popts.store = true;
        popts.threads = opts.threads;
        for (std::size_t di = 0; di < n_deltas; ++di) {
            const double dlt = opts.deltas[di];
            const PerturbationRun plus =
                simulate_perturbed(ens, spec, dom, interior, traj, dlt, +1, popts);
            const auto vp =
                picard_path_values(make_perturbed_ensemble(ens, plus), spec, dom, opts.picard, &plus);
            std::vector<Vec> vm;
            const PerturbationRun* minus_run = nullptr;
            PerturbationRun minus;
            if (second_order) {
                minus = simulate_perturbed(ens, spec, dom, interior, traj, dlt, -1, popts);
                minus_run = &minus;
                vm = picard_path_values(make_perturbed_ensemble(ens, minus), spec, dom, opts.picard,
                                        minus_run);
            }
            for (std::size_t p = 0; p < ens.n_paths; ++p) {
                if (plus.guard_violated[p] || (minus_run && minus.guard_violated[p])) {
                    masked[p] = 1;
                    continue;
                }
                if (plus.paths[p].capped || (minus_run && minus.paths[p].capped))
                    capped_any[p] = 1;
                for (int c = 0; c < k; ++c) {
                    if (!second_order)
                        q[di][c][p] = (vp[p][c] - base_values[p][c]) / dlt;
                    else
                        q[di][c][p] =
                            (vp[p][c] - 2.0 * base_values[p][c] + vm[p][c]) / (dlt * dlt);
                }
            }
        }
    }

    QuotientReport rep;
    rep.deltas = opts.deltas;
    rep.estimate.resize(k);
    rep.ci95.resize(k);
    std::size_t n_masked = 0, n_capped = 0;
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
        n_masked += masked[p];
        n_capped += capped_any[p];
    }
    rep.guard_violation_rate = static_cast<double>(n_masked) / static_cast<double>(ens.n_paths);
    rep.capped_rate = static_cast<double>(n_capped) / static_cast<double>(ens.n_paths);

    rep.quotients.assign(n_deltas, Vec::Zero(k));
    rep.quotient_se.assign(n_deltas, Vec::Zero(k));
    std::vector<double> extrap_vals;
    std::vector<double> vals;
    for (int c = 0; c < k; ++c) {
        for (std::size_t di = 0; di < n_deltas; ++di) {
            vals.clear();
            for (std::size_t p = 0; p < ens.n_paths; ++p)
                if (!masked[p]) vals.push_back(q[di][c][p]);
            const SampleStats st = sample_stats(vals);
            rep.quotients[di][c] = st.mean;
            rep.quotient_se[di][c] = st.stderr_mean;
        }
        // Extrapolation to delta = 0 under the first-order-bias model
        // q(delta) = a + b delta, fitted with inverse-variance weights: the
        // per-path quotient noise grows like 1/sqrt(delta) (exit-time
        // mismatch of the coupled pair), so an unweighted Neville table
        // would amplify the noisiest rung.
        Mat design(n_deltas, 2);
        Vec wts(n_deltas);
        for (std::size_t di = 0; di < n_deltas; ++di) {
            design(static_cast<Eigen::Index>(di), 0) = 1.0;
            design(static_cast<Eigen::Index>(di), 1) = opts.deltas[di];
            const double se = rep.quotient_se[di][c];
            wts[static_cast<Eigen::Index>(di)] = 1.0 / (se * se + 1e-300);
        }
        // a = e1^T (X^T W X)^{-1} X^T W q: precompute the row acting on q.
        const Mat wd = wts.asDiagonal() * design;
        const Mat normal = design.transpose() * wd;
        const Eigen::RowVectorXd row = normal.inverse().row(0) * wd.transpose();

        extrap_vals.clear();
        for (std::size_t p = 0; p < ens.n_paths; ++p) {
            if (masked[p]) continue;
            double v = 0.0;
            for (std::size_t di = 0; di < n_deltas; ++di)
                v += row[static_cast<Eigen::Index>(di)] * q[di][c][p];
            extrap_vals.push_back(v);
        }
        const SampleStats st = sample_stats(extrap_vals);
        rep.estimate[c] = st.mean;
        rep.ci95[c] = st.ci95_halfwidth;
    }
    rep.verdict = monotonicity_verdict(rep.quotients, rep.quotient_se);
    if (second_order) {
        for (int c = 0; c < k; ++c)
            if (rep.ci95[c] > std::abs(rep.estimate[c]) && std::abs(rep.estimate[c]) > 1e-12)
                rep.verdict = "inconclusive";
    }
    return rep;
}

}  // namespace

QuotientReport grad_estimate(const ProblemSpec& spec, const DomainSpec& dom,
                             const InteriorScheme* interior, const Vec& x, const Vec& xi0,
                             const EstimatorOptions& opts) {
    return difference_quotients(spec, dom, interior, x, xi0, opts, false);
}

QuotientReport hessian_estimate(const ProblemSpec& spec, const DomainSpec& dom,
                                const InteriorScheme* interior, const Vec& x, const Vec& xi0,
                                const EstimatorOptions& opts) {
    return difference_quotients(spec, dom, interior, x, xi0, opts, true);
}

FlowConvergenceReport flow_convergence(const ProblemSpec& spec, const DomainSpec& dom,
                                       const InteriorScheme* interior, const Vec& x,
                                       const Vec& xi0, const FlowOptions& opts) {
    SimOptions sim;
    sim.h = opts.h;
    sim.t_max = opts.horizon + 2.0 * opts.h;
    sim.n_paths = opts.n_paths;
    sim.seed = opts.seed;
    sim.threads = opts.threads;
    const PathEnsemble ens = simulate_ensemble(spec, dom, x, sim);

    QuasiOptions qopts;
    qopts.scheme = opts.scheme;
    qopts.moment_order = opts.moment_order;
    qopts.clip_n = opts.clip_n;
    qopts.evolve_eta = opts.second_order;
    qopts.tilde_from_scheme = false;

    std::vector<JobSpec> jobs;
    for (double dlt : opts.deltas) {
        JobSpec jp;
        jp.delta = dlt;
        jp.sign = +1;
        jp.second_order = opts.second_order;
        jp.eta0 = opts.second_order ? Vec(Vec::Zero(spec.d)) : Vec();
        jobs.push_back(jp);
        if (opts.second_order) {
            jp.sign = -1;
            jobs.push_back(jp);
        }
    }

    const std::size_t n_deltas = opts.deltas.size();
    std::vector<std::vector<double>> sup1(n_deltas, std::vector<double>(ens.n_paths, 0.0));
    std::vector<std::vector<double>> sup2(opts.second_order ? n_deltas : 0,
                                          std::vector<double>(opts.second_order ? ens.n_paths : 0,
                                                              0.0));

    parallel_for(
        ens.n_paths,
        [&](std::size_t p) {
            std::vector<JobState> states;
            run_coupled_path(
                spec, dom, interior, ens, p, qopts, xi0, jobs, states, false, true,
                [&](std::size_t i, const Vec& x_base, bool base_alive, const QuasiEvolver& ev) {
                    // Compare at time (i+1) h while everything is alive.
                    if (!base_alive || !ev.running()) return;
                    const double t = static_cast<double>(i + 1) * ens.h;
                    if (t > opts.horizon) return;
                    for (std::size_t di = 0; di < n_deltas; ++di) {
                        if (!opts.second_order) {
                            const JobState& js = states[di];
                            if (!js.alive) continue;
                            const double err =
                                ((js.x - x_base) / opts.deltas[di] - ev.xi()).norm();
                            sup1[di][p] = std::max(sup1[di][p], err);
                        } else {
                            const JobState& plus = states[2 * di];
                            const JobState& minus = states[2 * di + 1];
                            if (!plus.alive || !minus.alive) continue;
                            const double dlt = opts.deltas[di];
                            const double err1 = ((plus.x - x_base) / dlt - ev.xi()).norm();
                            sup1[di][p] = std::max(sup1[di][p], err1);
                            const double err2 =
                                ((plus.x - 2.0 * x_base + minus.x) / (dlt * dlt) - ev.eta())
                                    .norm();
                            sup2[di][p] = std::max(sup2[di][p], err2);
                        }
                    }
                });
        },
        opts.threads);

    FlowConvergenceReport rep;
    rep.deltas = opts.deltas;
    for (std::size_t di = 0; di < n_deltas; ++di) {
        rep.sup_error_first.push_back(sample_stats(sup1[di]).mean);
        if (opts.second_order) rep.sup_error_second.push_back(sample_stats(sup2[di]).mean);
    }
    for (std::size_t di = 0; di + 1 < n_deltas; ++di) {
        rep.ratios_first.push_back(rep.sup_error_first[di] /
                                   std::max(1e-300, rep.sup_error_first[di + 1]));
        if (opts.second_order)
            rep.ratios_second.push_back(rep.sup_error_second[di] /
                                        std::max(1e-300, rep.sup_error_second[di + 1]));
    }
    return rep;
}

}  // namespace qdb
