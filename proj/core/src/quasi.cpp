#include "qdb/quasi.hpp"

#include <cmath>
#include <sstream>

#include "qdb/numeric.hpp"
#include "quasi_drive.hpp"

namespace qdb {

namespace {

double phi_of(const DomainSpec& dom, double psi) {
    return dom.lambda * dom.lambda + psi - psi * psi / (4.0 * dom.lambda);
}

}  // namespace

QuasiCoeffs boundary_scheme(const ProblemSpec& spec, const DomainSpec& dom, const Vec& x,
                            const Vec& xi, double moment_order) {
    const double psi = dom.psi(x);
    if (!(psi > dom.delta1 && psi < dom.lambda)) {
        std::ostringstream os;
        os << "boundary_scheme: psi(x) = " << psi << " outside (" << dom.delta1 << ", "
           << dom.lambda << ")";
        throw std::domain_error(os.str());
    }
    const Vec grad = dom.psi_grad(x);
    const Mat sig = spec.sigma(x);
    const Vec psi_sig = sig.transpose() * grad;  // psi_{(sigma_i)}
    const double A = psi_sig.squaredNorm();
    if (!(A > 1e-10))
        throw std::domain_error(
            "boundary_scheme: normal diffusion degenerate (A <= 1e-10), (H9) fails here");
    // (psi_{(sigma_i)})_{(xi)} = <grad, sigma_{(xi)} e_i> + <psi_xx xi, sigma e_i>
    const Vec dpsi_sig = spec.sigma_dir(x, xi).transpose() * grad +
                         sig.transpose() * (dom.psi_hess(x) * xi);
    const double rbar = -psi_sig.dot(dpsi_sig) / A;
    const double psi_xi = grad.dot(xi);
    const double phi = phi_of(dom, psi);

    QuasiCoeffs c;
    c.r = rbar + psi_xi / psi;
    c.r_tilde = (psi_xi / psi) * (psi_xi / psi);
    c.pi = (4.0 * moment_order * psi_xi / (phi * psi)) * psi_sig;
    c.P = (dpsi_sig * psi_sig.transpose() - psi_sig * dpsi_sig.transpose()) / A;
    c.pi_tilde = Vec::Zero(spec.d1);
    c.P_tilde = Mat::Zero(spec.d1, spec.d1);
    return c;
}

QuasiCoeffs interior_scheme(const ProblemSpec& spec, const DomainSpec& dom,
                            const InteriorScheme& scheme, const Vec& x, const Vec& xi,
                            const Vec* eta) {
    const double psi = dom.psi(x);
    if (!(psi > dom.lambda * dom.lambda)) {
        std::ostringstream os;
        os << "interior_scheme: psi(x) = " << psi << " not above lambda^2 = "
           << dom.lambda * dom.lambda;
        throw std::domain_error(os.str());
    }
    const Mat sig_t = spec.sigma(x).transpose();
    QuasiCoeffs c;
    c.r = scheme.rho(x).dot(xi);
    c.pi = (0.5 * scheme.M(x)) * (sig_t * xi);
    const Mat q = scheme.Q(x, xi);
    c.P = 0.5 * (q - q.transpose());  // skew-symmetry enforced exactly
    if (eta != nullptr) {
        c.r_tilde = scheme.rho(x).dot(*eta);
        c.pi_tilde = (0.5 * scheme.M(x)) * (sig_t * (*eta));
        const Mat qt = scheme.Q(x, *eta);
        c.P_tilde = 0.5 * (qt - qt.transpose());
    } else {
        c.pi_tilde = Vec::Zero(spec.d1);
        c.P_tilde = Mat::Zero(spec.d1, spec.d1);
    }
    return c;
}

QuasiEvolver::QuasiEvolver(const ProblemSpec& spec, const DomainSpec& dom,
                           const InteriorScheme* interior, const QuasiOptions& opts, Vec xi0,
                           Vec eta0)
    : spec_(spec), dom_(dom), interior_(interior), opts_(opts), xi_(std::move(xi0)),
      eta_(std::move(eta0)) {
    if (opts_.scheme == SchemeKind::Interior && interior_ == nullptr)
        throw std::invalid_argument("QuasiEvolver: interior scheme requires control functions");
    if (eta_.size() == 0) eta_ = Vec::Zero(spec_.d);
    coeffs_.pi = Vec::Zero(spec_.d1);
    coeffs_.pi_tilde = Vec::Zero(spec_.d1);
    coeffs_.P = Mat::Zero(spec_.d1, spec_.d1);
    coeffs_.P_tilde = Mat::Zero(spec_.d1, spec_.d1);
}

bool QuasiEvolver::in_region(const Vec& x) const {
    const double psi = dom_.psi(x);
    switch (opts_.scheme) {
        case SchemeKind::Boundary:
            return psi > dom_.delta1 && psi < dom_.lambda;
        case SchemeKind::Interior:
            return psi > dom_.lambda * dom_.lambda;
        case SchemeKind::Zero:
            return psi > 0.0;
    }
    return false;
}

bool QuasiEvolver::precheck(std::size_t step_index, const Vec& x) {
    if (stop_ != QuasiStop::Running) return false;
    if (!in_region(x)) {
        stop(QuasiStop::RegionExit, step_index);
        return false;
    }
    if (opts_.clip_n > 0.0 && xi_.norm() >= opts_.clip_n) {
        stop(QuasiStop::Clipped, step_index);
        return false;
    }
    return true;
}

void QuasiEvolver::evaluate_coeffs(const Vec& x) {
    switch (opts_.scheme) {
        case SchemeKind::Boundary:
            coeffs_ = boundary_scheme(spec_, dom_, x, xi_, opts_.moment_order);
            if (opts_.evolve_eta) {
                // The near-boundary second-order run keeps pi~ = P~ = 0 and
                // r~ = (psi_{(xi)}/psi)^2, already set by boundary_scheme.
            }
            break;
        case SchemeKind::Interior:
            coeffs_ = interior_scheme(spec_, dom_, *interior_, x, xi_,
                                      opts_.evolve_eta ? &eta_ : nullptr);
            if (!opts_.tilde_from_scheme) {
                coeffs_.pi_tilde.setZero();
                coeffs_.P_tilde.setZero();
            }
            break;
        case SchemeKind::Zero:
            coeffs_.r = 0.0;
            coeffs_.r_tilde = 0.0;
            coeffs_.pi.setZero();
            coeffs_.pi_tilde.setZero();
            coeffs_.P.setZero();
            coeffs_.P_tilde.setZero();
            break;
    }
}

void QuasiEvolver::consume(std::size_t step_index, const Vec& x, const Vec& dw, double h) {
    if (stop_ != QuasiStop::Running) return;
    try {
        evaluate_coeffs(x);
    } catch (const std::exception&) {
        stop(QuasiStop::Flagged, step_index);
        return;
    }
    const Mat sig = spec_.sigma(x);
    const Mat sig_xi = spec_.sigma_dir(x, xi_);
    const Vec b = spec_.b(x);
    const Vec b_xi = spec_.b_dir(x, xi_);
    const double r = coeffs_.r;

    const Mat xi_diff = sig_xi + r * sig + sig * coeffs_.P;
    const Vec xi_drift = b_xi + 2.0 * r * b - sig * coeffs_.pi;
    Vec xi_next = xi_ + xi_diff * dw + xi_drift * h;

    if (opts_.evolve_eta) {
        const Mat sig_eta = spec_.sigma_dir(x, eta_);
        const Vec b_eta = spec_.b_dir(x, eta_);
        const Mat sig_xixi = spec_.sigma_dir2(x, xi_, xi_);
        const Vec b_xixi = spec_.b_dir2(x, xi_, xi_);
        const Mat sigP = sig * coeffs_.P;
        const Mat eta_diff = sig_eta + coeffs_.r_tilde * sig + sig * coeffs_.P_tilde + sig_xixi +
                             2.0 * r * sig_xi - r * r * sig + 2.0 * sig_xi * coeffs_.P +
                             2.0 * r * sigP + sigP * coeffs_.P;
        const Vec eta_drift = b_eta + 2.0 * coeffs_.r_tilde * b - sig * coeffs_.pi_tilde + b_xixi +
                              4.0 * r * b_xi - 2.0 * sig_xi * coeffs_.pi - 2.0 * r * sig * coeffs_.pi -
                              2.0 * sigP * coeffs_.pi;
        eta_ += eta_diff * dw + eta_drift * h;
        eta0_mart_ += coeffs_.pi_tilde.dot(dw);
    }

    xi0_adj_ += coeffs_.pi.dot(dw);
    xi0_qv_ += coeffs_.pi.squaredNorm() * h;
    eta0_adj_ = xi0_adj_ * xi0_adj_ - xi0_qv_ + eta0_mart_;
    xi_ = std::move(xi_next);

    if (!xi_.allFinite() || (opts_.evolve_eta && !eta_.allFinite()) || !std::isfinite(xi0_adj_))
        stop(QuasiStop::Flagged, step_index);
}

bool QuasiEvolver::step(std::size_t step_index, const Vec& x, const Vec& dw, double h) {
    if (!precheck(step_index, x)) return false;
    consume(step_index, x, dw, h);
    return running();
}

void QuasiEvolver::stop(QuasiStop reason, std::size_t step_index) {
    if (stop_ != QuasiStop::Running) return;
    stop_ = reason;
    stop_step_ = step_index;
}

namespace {

QuasiTrajectory evolve_impl(const PathEnsemble& ens, const ProblemSpec& spec,
                            const DomainSpec& dom, const InteriorScheme* interior, const Vec& xi0,
                            const Vec& eta0, const QuasiOptions& opts) {
    QuasiTrajectory traj;
    traj.opts = opts;
    traj.xi0_init = xi0;
    traj.eta0_init = eta0.size() ? eta0 : Vec(Vec::Zero(spec.d));
    traj.paths.resize(ens.n_paths);
    if (opts.store) {
        traj.store.emplace();
        traj.store->xi.resize(ens.n_paths);
        traj.store->eta.resize(ens.n_paths);
        traj.store->xi0.resize(ens.n_paths);
        traj.store->eta0.resize(ens.n_paths);
        traj.store->coeffs.resize(ens.n_paths);
    }
    parallel_for(ens.n_paths, [&](std::size_t p) {
        std::vector<Vec> xis, etas;
        std::vector<double> xi0s, eta0s;
        std::vector<QuasiCoeffs> ctrace;
        bool first_record = true;
        auto record = [&](const QuasiEvolver& ev) {
            if (!opts.store) return;
            xis.push_back(ev.xi());
            etas.push_back(ev.eta());
            xi0s.push_back(ev.xi0_adjoint());
            eta0s.push_back(ev.eta0_adjoint());
            // last_coeffs() holds the controls of the step just consumed, so
            // the trace trails the state records by one call.
            if (!first_record) ctrace.push_back(ev.last_coeffs());
            first_record = false;
        };
        detail::drive_quasi_path(
            spec, dom, interior, ens, p, xi0, traj.eta0_init, opts,
            [&](std::size_t, const Vec&, const QuasiEvolver& ev) {
                record(ev);
            },
            [&](std::size_t stop_step, const Vec&, const QuasiEvolver& ev) {
                record(ev);
                auto& rec = traj.paths[p];
                rec.reason = ev.stop_reason();
                rec.stop_step = stop_step;
                rec.xi_stop = ev.xi();
                rec.eta_stop = ev.eta();
                rec.xi0_stop = ev.xi0_adjoint();
                rec.eta0_stop = ev.eta0_adjoint();
                rec.flagged = ev.stop_reason() == QuasiStop::Flagged;
            });
        if (opts.store) {
            auto& st = *traj.store;
            Mat xm(static_cast<Eigen::Index>(xis.size()), spec.d);
            Mat em(static_cast<Eigen::Index>(etas.size()), spec.d);
            Vec x0v(static_cast<Eigen::Index>(xi0s.size()));
            Vec e0v(static_cast<Eigen::Index>(eta0s.size()));
            for (std::size_t i = 0; i < xis.size(); ++i) {
                xm.row(static_cast<Eigen::Index>(i)) = xis[i].transpose();
                em.row(static_cast<Eigen::Index>(i)) = etas[i].transpose();
                x0v[static_cast<Eigen::Index>(i)] = xi0s[i];
                e0v[static_cast<Eigen::Index>(i)] = eta0s[i];
            }
            st.xi[p] = std::move(xm);
            st.eta[p] = std::move(em);
            st.xi0[p] = std::move(x0v);
            st.eta0[p] = std::move(e0v);
            st.coeffs[p] = std::move(ctrace);
        }
    });
    return traj;
}

}  // namespace

QuasiTrajectory evolve_first(const PathEnsemble& ens, const ProblemSpec& spec,
                             const DomainSpec& dom, const InteriorScheme* interior,
                             const Vec& xi0, const QuasiOptions& opts) {
    QuasiOptions o = opts;
    o.evolve_eta = false;
    return evolve_impl(ens, spec, dom, interior, xi0, Vec::Zero(spec.d), o);
}

QuasiTrajectory evolve_second(const PathEnsemble& ens, const ProblemSpec& spec,
                              const DomainSpec& dom, const InteriorScheme* interior,
                              const QuasiTrajectory& xi_traj, const Vec& eta0) {
    QuasiOptions o = xi_traj.opts;
    o.evolve_eta = true;
    return evolve_impl(ens, spec, dom, interior, xi_traj.xi0_init, eta0, o);
}

bool MartingaleReport::pass(double z_threshold) const {
    for (const auto& row : rows) {
        if (std::abs(row.z_first) > z_threshold) return false;
        if (includes_second && std::abs(row.z_second) > z_threshold) return false;
    }
    return true;
}

MartingaleReport martingale_statistic(const TestFunction& v, const PathEnsemble& ens,
                                      const ProblemSpec& spec, const DomainSpec& dom,
                                      const InteriorScheme* interior, const Vec& xi0,
                                      const QuasiOptions& opts,
                                      const std::vector<double>& checkpoints, double lv_tol) {
    if (checkpoints.empty()) throw std::invalid_argument("martingale_statistic: no checkpoints");

    // Gate: v must be L-harmonic on samples.
    double lv_res = 0.0;
    for (const Vec& x : sample_interior_grid(dom, 9, false)) {
        const double lv = spec.generator(x, v.grad(x), v.hess(x));
        lv_res = std::max(lv_res, std::abs(lv));
    }
    if (lv_res > lv_tol) {
        std::ostringstream os;
        os << "martingale_statistic: |Lv| = " << lv_res << " exceeds tolerance " << lv_tol
           << " for v = " << v.name << " (not in the harmonic class)";
        throw std::invalid_argument(os.str());
    }

    std::vector<std::size_t> cp_steps;
    cp_steps.reserve(checkpoints.size());
    for (double t : checkpoints)
        cp_steps.push_back(static_cast<std::size_t>(std::llround(t / ens.h)));

    const std::size_t n_cp = cp_steps.size();
    const bool second = opts.evolve_eta;
    std::vector<std::vector<double>> m1(n_cp, std::vector<double>(ens.n_paths, 0.0));
    std::vector<std::vector<double>> m2(second ? n_cp : 0,
                                        std::vector<double>(second ? ens.n_paths : 0, 0.0));

    auto first_value = [&](const Vec& x, const QuasiEvolver& ev) {
        return v.grad(x).dot(ev.xi()) + ev.xi0_adjoint() * v.value(x);
    };
    auto second_value = [&](const Vec& x, const QuasiEvolver& ev) {
        const Vec gr = v.grad(x);
        return ev.xi().dot(v.hess(x) * ev.xi()) + gr.dot(ev.eta()) +
               2.0 * ev.xi0_adjoint() * gr.dot(ev.xi()) + ev.eta0_adjoint() * v.value(x);
    };

    parallel_for(ens.n_paths, [&](std::size_t p) {
        std::size_t next_cp = 0;
        detail::drive_quasi_path(
            spec, dom, interior, ens, p, xi0, Vec::Zero(spec.d), opts,
            [&](std::size_t i, const Vec& x, const QuasiEvolver& ev) {
                while (next_cp < n_cp && i == cp_steps[next_cp]) {
                    m1[next_cp][p] = first_value(x, ev);
                    if (second) m2[next_cp][p] = second_value(x, ev);
                    ++next_cp;
                }
            },
            [&](std::size_t, const Vec& x_stop, const QuasiEvolver& ev) {
                const double v1 = first_value(x_stop, ev);
                const double v2 = second ? second_value(x_stop, ev) : 0.0;
                for (; next_cp < n_cp; ++next_cp) {
                    m1[next_cp][p] = v1;
                    if (second) m2[next_cp][p] = v2;
                }
            });
    });

    MartingaleReport report;
    report.v_name = v.name;
    report.includes_second = second;
    report.lv_residual = lv_res;
    report.m0_first = v.grad(ens.x0).dot(xi0);
    report.m0_second = second ? xi0.dot(v.hess(ens.x0) * xi0) : 0.0;
    for (std::size_t c = 0; c < n_cp; ++c) {
        MartingaleRow row;
        row.t = checkpoints[c];
        row.n = ens.n_paths;
        const SampleStats s1 = sample_stats(m1[c]);
        row.mean_first = s1.mean;
        row.se_first = s1.stderr_mean;
        row.z_first = s1.stderr_mean > 0 ? (s1.mean - report.m0_first) / s1.stderr_mean : 0.0;
        if (second) {
            const SampleStats s2 = sample_stats(m2[c]);
            row.mean_second = s2.mean;
            row.se_second = s2.stderr_mean;
            row.z_second = s2.stderr_mean > 0 ? (s2.mean - report.m0_second) / s2.stderr_mean : 0.0;
        }
        report.rows.push_back(row);
    }
    return report;
}

double boundary_stable_h(const ProblemSpec& spec, const DomainSpec& dom, double moment_order,
                         double safety) {
    // Max of A over the closed region, on a grid.
    double a_max = 0.0;
    for (const Vec& x : sample_interior_grid(dom, 33, false)) {
        const double psi = dom.psi(x);
        if (psi >= dom.lambda) continue;
        const Vec psi_sig = spec.sigma(x).transpose() * dom.psi_grad(x);
        a_max = std::max(a_max, psi_sig.squaredNorm());
    }
    if (a_max <= 0.0) a_max = 1.0;
    const double phi_d1 = dom.lambda * dom.lambda + dom.delta1 -
                          dom.delta1 * dom.delta1 / (4.0 * dom.lambda);
    const double kappa = 4.0 * moment_order * a_max / (phi_d1 * dom.delta1);
    return safety / kappa;
}

}  // namespace qdb
