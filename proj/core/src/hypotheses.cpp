#include <cmath>
#include <sstream>

#include "qdb/problem.hpp"

namespace qdb {

namespace {

std::string point_str(const Vec& x) {
    std::ostringstream os;
    os << "(";
    for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
    os << ")";
    return os.str();
}

template <class F>
auto guarded(const Vec& x, const char* what, F&& fn) {
    try {
        auto v = fn();
        return v;
    } catch (const std::exception& e) {
        std::ostringstream os;
        os << what << " evaluation failed at grid point " << point_str(x) << ": " << e.what();
        throw std::runtime_error(os.str());
    }
}

}  // namespace

HypothesisReport validate_hypotheses(const ProblemSpec& spec, const DomainSpec& dom,
                                     const std::vector<Vec>& grid) {
    if (grid.empty()) throw std::invalid_argument("validate_hypotheses: empty grid");
    for (const Vec& x : grid)
        if (!(dom.psi(x) > 0.0))
            throw std::invalid_argument("validate_hypotheses: grid point outside {psi > 0} at " +
                                        point_str(x));

    HypothesisReport report;

    // (H2): L psi <= -1, i.e. max(L psi + 1) <= 0.
    {
        HypothesisCheck c;
        c.name = "H2";
        double worst = -std::numeric_limits<double>::infinity();
        Vec witness;
        for (const Vec& x : grid) {
            const double lpsi = guarded(x, "generator", [&] {
                return spec.generator(x, dom.psi_grad(x), dom.psi_hess(x));
            });
            if (lpsi + 1.0 > worst) {
                worst = lpsi + 1.0;
                witness = x;
            }
        }
        c.margin = worst;
        c.pass = worst <= 0.0;
        c.witness = witness;
        c.detail = "max over grid of L psi + 1 (pass when <= 0)";
        report.h2 = c;
    }

    // (H3): sum of C^2 norms of sigma and b plus |psi|_2 within K0. The
    // hypothesis bounds |psi|_4; only second-order smoothness of psi is
    // recorded here, so the check is a partial one.
    {
        HypothesisCheck c;
        c.name = "H3";
        const int d = spec.d, d1 = spec.d1;
        Mat sig_sup = Mat::Zero(d, d1), sig_dx_sup = Mat::Zero(d, d1), sig_dxx_sup = Mat::Zero(d, d1);
        Vec b_sup = Vec::Zero(d), b_dx_sup = Vec::Zero(d), b_dxx_sup = Vec::Zero(d);
        double psi0 = 0, psi1 = 0, psi2 = 0;
        double worst_total = -1.0;
        Vec witness;
        std::vector<Vec> basis;
        for (int i = 0; i < d; ++i) {
            Vec e = Vec::Zero(d);
            e[i] = 1;
            basis.push_back(e);
        }
        for (const Vec& x : grid) {
            const Mat s = guarded(x, "sigma", [&] { return spec.sigma(x); });
            const Vec bx = guarded(x, "b", [&] { return spec.b(x); });
            Mat sdx = Mat::Zero(d, d1), sdxx = Mat::Zero(d, d1);
            Vec bdx = Vec::Zero(d), bdxx = Vec::Zero(d);
            for (int l = 0; l < d; ++l) {
                const Mat sl = spec.sigma_dir(x, basis[l]);
                const Vec bl = spec.b_dir(x, basis[l]);
                sdx.array() += sl.array().square();
                bdx.array() += bl.array().square();
                for (int m = 0; m < d; ++m) {
                    const Mat slm = spec.sigma_dir2(x, basis[l], basis[m]);
                    const Vec blm = spec.b_dir2(x, basis[l], basis[m]);
                    sdxx.array() += slm.array().square();
                    bdxx.array() += blm.array().square();
                }
            }
            sdx = sdx.array().sqrt().matrix();
            sdxx = sdxx.array().sqrt().matrix();
            bdx = bdx.array().sqrt().matrix();
            bdxx = bdxx.array().sqrt().matrix();
            sig_sup = sig_sup.cwiseMax(s.cwiseAbs());
            sig_dx_sup = sig_dx_sup.cwiseMax(sdx);
            sig_dxx_sup = sig_dxx_sup.cwiseMax(sdxx);
            b_sup = b_sup.cwiseMax(bx.cwiseAbs());
            b_dx_sup = b_dx_sup.cwiseMax(bdx);
            b_dxx_sup = b_dxx_sup.cwiseMax(bdxx);
            const double p0 = std::abs(dom.psi(x));
            const double p1 = dom.psi_grad(x).norm();
            const double p2 = dom.psi_hess(x).norm();
            psi0 = std::max(psi0, p0);
            psi1 = std::max(psi1, p1);
            psi2 = std::max(psi2, p2);
            const double here = s.cwiseAbs().sum() + bx.cwiseAbs().sum() + p0 + p1 + p2;
            if (here > worst_total) {
                worst_total = here;
                witness = x;
            }
        }
        const double total = (sig_sup + sig_dx_sup + sig_dxx_sup).sum() +
                             (b_sup + b_dx_sup + b_dxx_sup).sum() + psi0 + psi1 + psi2;
        c.margin = total - spec.K0;
        c.pass = c.margin <= 0.0;
        c.witness = witness;
        c.detail = "sum of C^2 norms vs K0; |psi| recorded to second order only (|psi|_4 not checked)";
        report.h3 = c;
    }

    // (H9): <a n, n> > 0 at boundary samples.
    {
        HypothesisCheck c;
        c.name = "H9";
        std::vector<Vec> boundary;
        try {
            boundary = sample_level_set(dom, 0.0, 32);
        } catch (const std::exception& e) {
            c.pass = false;
            c.margin = 0.0;
            c.detail = std::string("no boundary found: ") + e.what();
            report.h9 = c;
            return report;
        }
        double worst = std::numeric_limits<double>::infinity();
        Vec witness;
        double min_grad = std::numeric_limits<double>::infinity();
        for (const Vec& y : boundary) {
            const Vec gpsi = dom.psi_grad(y);
            const double gn = gpsi.norm();
            min_grad = std::min(min_grad, gn);
            if (gn <= 0) {
                worst = 0.0;
                witness = y;
                break;
            }
            const Vec n = gpsi / gn;
            const double val = guarded(y, "a", [&] { return n.dot(spec.a(y) * n); });
            if (val < worst) {
                worst = val;
                witness = y;
            }
        }
        c.margin = worst;
        c.pass = worst > 0.0;
        c.witness = witness;
        std::ostringstream os;
        os << "min <a n, n> over boundary samples (pass when > 0); min |psi_x| = " << min_grad;
        c.detail = os.str();
        report.h9 = c;
    }

    return report;
}

H7Report check_h7(double mu, double L, double L0, double beta, double vartheta) {
    H7Report r;
    r.mu_window = (0.0 < mu) && (mu < L);
    r.beta_lo = -mu + 2.0 * L0 * L0;
    r.beta_hi = 0.0;
    r.beta_window = (r.beta_lo < 2.0 * beta) && (2.0 * beta < 0.0);
    r.vartheta_consistent = std::abs(2.0 * vartheta - (-2.0 * mu + L0 * L0)) <= 1e-12;
    r.pass = r.mu_window && r.beta_window && r.vartheta_consistent;
    std::ostringstream os;
    os << "0<mu<L: " << (r.mu_window ? "ok" : "violated") << "; -mu+2L0^2<2beta<0: "
       << (r.beta_window ? "ok" : "violated") << "; 2*vartheta=-2mu+L0^2: "
       << (r.vartheta_consistent ? "ok" : "violated");
    r.detail = os.str();
    return r;
}

H10Report check_h10(const ProblemSpec& spec, const DomainSpec& dom, const InteriorScheme& scheme,
                    double p, double beta, const std::vector<std::pair<Vec, Vec>>& samples) {
    if (samples.empty()) throw std::invalid_argument("check_h10: empty sample set");
    H10Report r;
    r.worst_margin = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Vec& x = samples[i].first;
        const Vec& y = samples[i].second;
        if (std::abs(y.norm() - 1.0) > 1e-8)
            throw std::invalid_argument("check_h10: sample direction not unit length");
        if (!dom.contains(x)) throw std::invalid_argument("check_h10: sample point outside D");
        const Mat s = spec.sigma(x);
        const double rho_y = scheme.rho(x).dot(y);
        const Mat diff = spec.sigma_dir(x, y) + rho_y * s + s * scheme.Q(x, y);
        const double lhs = 2.0 * p * (4.0 * p - 1.0) * diff.squaredNorm() +
                           4.0 * p * y.dot(spec.b_dir(x, y) + 2.0 * rho_y * spec.b(x));
        const double rhs = (-4.0 * p * beta - 1.0) + 2.0 * p * scheme.M(x) * y.dot(spec.a(x) * y);
        const double margin = lhs - rhs;
        if (margin > r.worst_margin) {
            r.worst_margin = margin;
            r.worst_index = i;
        }
    }
    r.pass = r.worst_margin <= 0.0;
    return r;
}

}  // namespace qdb
