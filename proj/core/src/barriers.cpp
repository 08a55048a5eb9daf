#include "qdb/barriers.hpp"

#include <cmath>
#include <sstream>

#include "qdb/numeric.hpp"
#include "quasi_drive.hpp"

namespace qdb {

double BarrierSpec::moment_order() const {
    switch (kind) {
        case BarrierKind::B1:
        case BarrierKind::B2:
            return 1.0;
        case BarrierKind::B3:
        case BarrierKind::B4:
            return 2.0;
        default:
            return p;
    }
}

bool BarrierSpec::is_boundary_kind() const {
    return kind == BarrierKind::B1 || kind == BarrierKind::B3 ||
           kind == BarrierKind::General2pMinus1;
}

void BarrierSpec::validate() const {
    if (!(K1 >= 1.0)) throw std::invalid_argument("BarrierSpec: K1 must be >= 1");
    if (!(lambda > 0.0 && lambda < 1.0))
        throw std::invalid_argument("BarrierSpec: lambda must lie in (0,1)");
    if (!(moment_order() > 0.0)) throw std::invalid_argument("BarrierSpec: p must be positive");
}

BarrierValue eval_barrier(const BarrierSpec& bspec, const DomainSpec& dom, const Vec& x,
                          const Vec& y) {
    bspec.validate();
    const double p = bspec.moment_order();
    const double lambda = bspec.lambda;
    BarrierValue out;
    out.phi = std::numeric_limits<double>::quiet_NaN();

    if (bspec.is_boundary_kind()) {
        const double psi = dom.psi(x);
        if (!(psi > 0.0)) throw std::domain_error("eval_barrier: psi(x) <= 0 for a boundary kind");
        const double phi = lambda * lambda + psi - psi * psi / (4.0 * lambda);
        const double psi_y = dom.psi_grad(x).dot(y);
        out.phi = phi;
        out.value = (lambda + std::sqrt(psi) + psi) * std::pow(y.norm(), 4.0 * p) +
                    bspec.K1 * std::pow(phi, (8.0 * p - 1.0) / 2.0) *
                        std::pow(psi_y, 4.0 * p) / std::pow(psi, 4.0 * p - 1.0);
        return out;
    }
    if (x.size() > 0) {
        const double psi = dom.psi(x);
        if (psi > 0.0) out.phi = lambda * lambda + psi - psi * psi / (4.0 * lambda);
    }
    out.value = std::pow(lambda, 0.75) * std::pow(y.norm(), 4.0 * p);
    return out;
}

OrderingReport ordering_check(const DomainSpec& dom, const BarrierSpec& b1_spec,
                              const std::vector<Vec>& samples_on_lambda,
                              const std::vector<Vec>& samples_on_lambda2,
                              const std::vector<Vec>& y_panel) {
    const double lambda = b1_spec.lambda;
    BarrierSpec b2_spec = b1_spec;
    b2_spec.kind = b1_spec.moment_order() == 1.0 ? BarrierKind::B2 : BarrierKind::General2p;
    b2_spec.p = b1_spec.moment_order();

    for (const Vec& x : samples_on_lambda)
        if (std::abs(dom.psi(x) - lambda) > 1e-6)
            throw std::invalid_argument("ordering_check: sample not on {psi = lambda}");
    for (const Vec& x : samples_on_lambda2)
        if (std::abs(dom.psi(x) - lambda * lambda) > 1e-6)
            throw std::invalid_argument("ordering_check: sample not on {psi = lambda^2}");

    OrderingReport rep;
    rep.worst_margin_on_lambda = std::numeric_limits<double>::infinity();
    rep.worst_margin_on_lambda2 = std::numeric_limits<double>::infinity();
    for (const Vec& x : samples_on_lambda) {
        for (const Vec& y : y_panel) {
            const double b1 = eval_barrier(b1_spec, dom, x, y).value;
            const double b2 = eval_barrier(b2_spec, dom, x, y).value;
            const double margin = b1 - 4.0 * b2;
            if (margin < rep.worst_margin_on_lambda) {
                rep.worst_margin_on_lambda = margin;
                rep.witness_lambda = x;
                rep.witness_dir_lambda = y;
            }
        }
    }
    for (const Vec& x : samples_on_lambda2) {
        for (const Vec& y : y_panel) {
            const double b1 = eval_barrier(b1_spec, dom, x, y).value;
            const double b2 = eval_barrier(b2_spec, dom, x, y).value;
            const double margin = b2 - 4.0 * b1;
            if (margin < rep.worst_margin_on_lambda2) {
                rep.worst_margin_on_lambda2 = margin;
                rep.witness_lambda2 = x;
                rep.witness_dir_lambda2 = y;
            }
        }
    }
    rep.pass = rep.worst_margin_on_lambda >= 0.0 && rep.worst_margin_on_lambda2 >= 0.0;
    return rep;
}

PhiBoundsReport phi_bounds_check(const DomainSpec& dom, double lambda,
                                 const std::vector<Vec>& samples) {
    PhiBoundsReport rep;
    rep.worst_low = std::numeric_limits<double>::infinity();
    rep.worst_high = std::numeric_limits<double>::infinity();
    rep.worst_psi = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const Vec& x : samples) {
        const double psi = dom.psi(x);
        if (!(psi > 0.0 && psi < lambda)) continue;
        any = true;
        const double phi = lambda * lambda + psi - psi * psi / (4.0 * lambda);
        rep.worst_low = std::min(rep.worst_low, phi - lambda * lambda);
        rep.worst_high = std::min(rep.worst_high, 2.0 * lambda - phi);
        rep.worst_psi = std::min(rep.worst_psi, 2.0 * phi - psi);
    }
    rep.pass = any && rep.worst_low >= -1e-12 && rep.worst_high >= -1e-12 &&
               rep.worst_psi >= -1e-12;
    return rep;
}

namespace {

std::vector<Vec> direction_panel(int d, int n) {
    std::vector<Vec> dirs;
    if (d == 1) {
        dirs.push_back(Vec::Ones(1));
        Vec m(1);
        m[0] = -1.0;
        dirs.push_back(m);
        return dirs;
    }
    for (int i = 0; i < n; ++i) {
        Vec v = Vec::Zero(d);
        const double theta = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
        v[0] = std::cos(theta);
        v[1] = std::sin(theta);
        if (d > 2 && i % 3 == 2) {
            v[2] = 0.5;
            v /= v.norm();
        }
        dirs.push_back(v);
    }
    return dirs;
}

}  // namespace

LambdaCalibration calibrate_ordering_lambda(const DomainSpec& dom, double K1, double lambda_start,
                                            int level_samples, int y_panel_size,
                                            int max_halvings) {
    LambdaCalibration cal;
    const double psi_sup = psi_sup_estimate(dom);
    const int d = static_cast<int>(dom.box_lo.size());
    const auto y_panel = direction_panel(d, y_panel_size);

    double lambda = lambda_start;
    for (int halvings = 0; halvings <= max_halvings; ++halvings, lambda *= 0.5) {
        if (lambda >= psi_sup) continue;  // level set empty; shrink further
        BarrierSpec b1{BarrierKind::B1, lambda, K1, 1.0};
        const auto on_lambda = sample_level_set(dom, lambda, level_samples);
        const auto on_lambda2 = sample_level_set(dom, lambda * lambda, level_samples);
        const auto ordering = ordering_check(dom, b1, on_lambda, on_lambda2, y_panel);
        // The strip {0 < psi < lambda} thins out as lambda shrinks, so sample
        // it through level sets rather than a domain grid.
        std::vector<Vec> strip;
        for (double frac : {0.1, 0.3, 0.5, 0.7, 0.9})
            for (const Vec& x : sample_level_set(dom, frac * lambda, 8)) strip.push_back(x);
        const auto phi_ok = phi_bounds_check(dom, lambda, strip);
        if (ordering.pass && phi_ok.pass) {
            cal.lambda = lambda;
            cal.halvings = halvings;
            cal.ok = true;
            cal.ordering = ordering;
            cal.phi_bounds = phi_ok;
            return cal;
        }
        cal.ordering = ordering;
        cal.phi_bounds = phi_ok;
    }
    cal.lambda = lambda;
    cal.halvings = max_halvings;
    cal.ok = false;
    return cal;
}

bool SupermartingaleReport::pass(double z_threshold) const {
    for (const auto& row : rows)
        if (row.z > z_threshold || row.z_sqrt > z_threshold) return false;
    return true;
}

SupermartingaleReport supermartingale_test(const BarrierSpec& bspec, const ProblemSpec& spec,
                                           const DomainSpec& dom, const InteriorScheme* interior,
                                           const Vec& x0, const Vec& xi0,
                                           const std::vector<double>& checkpoints,
                                           const SupermartingaleOptions& opts) {
    bspec.validate();
    if (std::abs(bspec.lambda - dom.lambda) > 1e-12)
        throw std::invalid_argument(
            "supermartingale_test: barrier lambda and domain lambda must agree");
    const bool boundary = bspec.is_boundary_kind();
    const double p = bspec.moment_order();
    const SchemeKind scheme = boundary ? SchemeKind::Boundary : SchemeKind::Interior;
    if (!boundary && interior == nullptr)
        throw std::invalid_argument("supermartingale_test: interior controls required");

    const double psi0 = dom.psi(x0);
    if (boundary && !(psi0 > dom.delta1 && psi0 < dom.lambda))
        throw std::invalid_argument("supermartingale_test: x0 outside the boundary region");
    if (!boundary && !(psi0 > dom.lambda * dom.lambda))
        throw std::invalid_argument("supermartingale_test: x0 outside the interior region");

    SimOptions sim;
    sim.h = opts.h;
    // The stopped process is only inspected at the checkpoints, so the base
    // paths never need to run past the last one.
    double cp_max = 0.0;
    for (double t : checkpoints) cp_max = std::max(cp_max, t);
    sim.t_max = opts.t_max > 0 ? opts.t_max : cp_max + 2.0 * opts.h;
    sim.n_paths = opts.n_paths;
    sim.seed = opts.seed;
    sim.threads = opts.threads;
    const PathEnsemble ens = simulate_ensemble(spec, dom, x0, sim);

    QuasiOptions qopts;
    qopts.scheme = scheme;
    qopts.moment_order = p;
    qopts.clip_n = opts.clip_n;

    // Discount rates: none for the boundary barriers, e^{4 p beta t} for the
    // interior ones (half rate for the square-root variants).
    const double rate_base = boundary ? 0.0 : 4.0 * p * spec.beta;
    const double rate_sqrt = boundary ? 0.0 : 2.0 * p * spec.beta;

    std::vector<std::size_t> cp_steps;
    for (double t : checkpoints)
        cp_steps.push_back(static_cast<std::size_t>(std::llround(t / ens.h)));
    const std::size_t n_cp = cp_steps.size();

    std::vector<std::vector<double>> vals(n_cp), vals_sqrt(n_cp);
    for (auto& v : vals) v.assign(ens.n_paths, 0.0);
    for (auto& v : vals_sqrt) v.assign(ens.n_paths, 0.0);
    std::vector<double> integral(ens.n_paths, 0.0);
    std::vector<unsigned char> flagged(ens.n_paths, 0), clipped(ens.n_paths, 0);

    parallel_for(
        ens.n_paths,
        [&](std::size_t path) {
            std::size_t next_cp = 0;
            Vec x_prev = ens.x0;
            auto emit = [&](std::size_t upto_excl, double t, const Vec& x, const QuasiEvolver& ev) {
                const double b = eval_barrier(bspec, dom, x, ev.xi()).value;
                while (next_cp < upto_excl) {
                    vals[next_cp][path] = std::exp(rate_base * t) * b;
                    vals_sqrt[next_cp][path] = std::exp(rate_sqrt * t) * std::sqrt(std::max(0.0, b));
                    ++next_cp;
                }
            };
            detail::drive_quasi_path(
                spec, dom, interior, ens, path, xi0, Vec::Zero(spec.d), qopts,
                [&](std::size_t i, const Vec& x, const QuasiEvolver& ev) {
                    while (next_cp < n_cp && i == cp_steps[next_cp]) {
                        const double t = static_cast<double>(i) * ens.h;
                        emit(next_cp + 1, t, x, ev);
                    }
                    if (boundary) {
                        const double psi = dom.psi(x);
                        const double ratio = dom.psi_grad(x).dot(ev.xi()) / psi;
                        integral[path] += (std::pow(ev.xi().norm(), 4.0 * p) +
                                           std::pow(std::abs(ratio), 4.0 * p)) *
                                          ens.h;
                    }
                    x_prev = x;
                },
                [&](std::size_t stop_step, const Vec& x_stop, const QuasiEvolver& ev) {
                    if (ev.stop_reason() == QuasiStop::Flagged) {
                        flagged[path] = 1;
                        next_cp = n_cp;
                        return;
                    }
                    if (ev.stop_reason() == QuasiStop::Clipped) clipped[path] = 1;
                    const double t_stop = static_cast<double>(stop_step) * ens.h;
                    Vec x_eval = x_stop;
                    if (dom.psi(x_stop) <= 0.0) {
                        // A single Euler step overshot the whole region; the
                        // continuous path stopped on the crossed region edge,
                        // so project the segment onto that level.
                        const double level =
                            boundary ? dom.delta1 : dom.lambda * dom.lambda;
                        Vec crossing(spec.d);
                        detail::bisect_level(dom, x_prev, x_stop, level, crossing);
                        x_eval = crossing;
                    }
                    emit(n_cp, t_stop, x_eval, ev);
                });
        },
        opts.threads);

    SupermartingaleReport rep;
    rep.bspec = bspec;
    rep.scheme = scheme;
    rep.x0 = x0;
    rep.xi0 = xi0;
    rep.b0 = eval_barrier(bspec, dom, x0, xi0).value;
    rep.b0_sqrt = std::sqrt(std::max(0.0, rep.b0));

    std::vector<double> kept, kept_sqrt, kept_integral;
    std::size_t n_flagged = 0, n_clipped = 0;
    for (std::size_t pth = 0; pth < ens.n_paths; ++pth) {
        n_flagged += flagged[pth];
        n_clipped += clipped[pth];
    }
    rep.flagged_rate = static_cast<double>(n_flagged) / static_cast<double>(ens.n_paths);
    rep.clip_rate = static_cast<double>(n_clipped) / static_cast<double>(ens.n_paths);

    for (std::size_t c = 0; c < n_cp; ++c) {
        kept.clear();
        kept_sqrt.clear();
        for (std::size_t pth = 0; pth < ens.n_paths; ++pth) {
            if (flagged[pth]) continue;
            kept.push_back(vals[c][pth]);
            kept_sqrt.push_back(vals_sqrt[c][pth]);
        }
        const SampleStats sb = sample_stats(kept);
        const SampleStats ss = sample_stats(kept_sqrt);
        SupermartingaleRow row;
        row.t = checkpoints[c];
        row.n = kept.size();
        row.mean = sb.mean;
        row.se = sb.stderr_mean;
        row.z = sb.stderr_mean > 0 ? (sb.mean - rep.b0) / sb.stderr_mean : 0.0;
        row.mean_sqrt = ss.mean;
        row.se_sqrt = ss.stderr_mean;
        row.z_sqrt = ss.stderr_mean > 0 ? (ss.mean - rep.b0_sqrt) / ss.stderr_mean : 0.0;
        rep.rows.push_back(row);
    }
    if (boundary) {
        for (std::size_t pth = 0; pth < ens.n_paths; ++pth)
            if (!flagged[pth]) kept_integral.push_back(integral[pth]);
        const SampleStats si = sample_stats(kept_integral);
        rep.moment_integral_mean = si.mean;
        rep.moment_integral_se = si.stderr_mean;
    }
    rep.pass_base = true;
    rep.pass_sqrt = true;
    for (const auto& row : rep.rows) {
        if (row.z > 3.0) rep.pass_base = false;
        if (row.z_sqrt > 3.0) rep.pass_sqrt = false;
    }
    return rep;
}

BarrierConstants calibrate_supermartingale_constants(const ProblemSpec& spec,
                                                     const DomainSpec& dom,
                                                     const InteriorScheme* interior,
                                                     double psi_of_x0_fraction,
                                                     const SupermartingaleOptions& pilot_opts,
                                                     double lambda_start, int max_halvings,
                                                     int max_doublings) {
    BarrierConstants out;
    const double psi_sup = psi_sup_estimate(dom);
    double lambda = std::min(lambda_start, 0.5 * psi_sup);

    for (int lh = 0; lh <= max_halvings; ++lh, lambda *= 0.5) {
        DomainSpec dm = dom;
        dm.lambda = lambda;
        dm.delta1 = 0.5 * lambda * lambda;
        const Vec x0 = sample_level_set(dm, psi_of_x0_fraction * lambda, 1).front();

        SupermartingaleOptions opts = pilot_opts;
        opts.h = std::min(opts.h, boundary_stable_h(spec, dm, 2.0));
        const double t_scale = psi_of_x0_fraction * lambda;
        const std::vector<double> cps = {0.25 * t_scale, 0.5 * t_scale, t_scale};

        // Direction panel: tangential and mixed relative to psi_x.
        const Vec grad = dm.psi_grad(x0);
        std::vector<Vec> xi_panel;
        if (spec.d == 1) {
            xi_panel.push_back(Vec::Ones(1));
        } else {
            Vec tang = Vec::Zero(spec.d);
            tang[0] = -grad[1];
            tang[1] = grad[0];
            if (tang.norm() < 1e-12) tang = Vec::Unit(spec.d, 0);
            tang.normalize();
            Vec mix = (tang + 0.5 * grad / std::max(1e-12, grad.norm())).normalized();
            xi_panel.push_back(tang);
            xi_panel.push_back(mix);
        }

        double K1 = 1.0;
        for (int kd = 0; kd <= max_doublings; ++kd, K1 *= 2.0) {
            bool all_pass = true;
            for (const Vec& xi0 : xi_panel) {
                for (const BarrierKind kind : {BarrierKind::B1, BarrierKind::B3}) {
                    BarrierSpec bs{kind, lambda, K1, kind == BarrierKind::B1 ? 1.0 : 2.0};
                    const auto rep =
                        supermartingale_test(bs, spec, dm, interior, x0, xi0, cps, opts);
                    if (!(rep.pass_base && rep.pass_sqrt) || rep.flagged_rate > 0.001) {
                        all_pass = false;
                        break;
                    }
                }
                if (!all_pass) break;
            }
            if (all_pass) {
                out.lambda_sm = lambda;
                out.delta1 = dm.delta1;
                out.K1 = K1;
                out.ok = true;
                out.lambda_halvings = lh;
                out.k1_doublings = kd;
                return out;
            }
        }
    }
    return out;
}

}  // namespace qdb
