// Batch harness: loads a problem + numerics config, runs one experiment, and
// writes machine-readable reports (plus a human summary on stdout).
//
// Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 config error,
// 3 hypothesis gate failed without --force.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "qdb/barriers.hpp"
#include "qdb/bsde.hpp"
#include "qdb/builtin.hpp"
#include "qdb/estimates.hpp"
#include "qdb/perturbed.hpp"
#include "qdb/problem.hpp"
#include "qdb/quasi.hpp"
#include "qdb/sde.hpp"

using json = nlohmann::ordered_json;
using namespace qdb;

namespace {

struct Numerics {
    double h = 1e-3;
    std::size_t n_paths = 10000;
    double t_max = 0.0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<double> deltas = {0.1, 0.05, 0.025};
    std::optional<double> lambda;
    std::optional<double> delta1;
    double K1 = 1.0;
    double clip_n = 1000.0;
    std::optional<double> beta;
    double moment_order = 1.0;
    unsigned threads = 0;
    std::string method = "auto";  // auto | driver-free | picard
    std::vector<double> checkpoints = {0.05, 0.1, 0.2};
};

struct Config {
    json raw;
    BuiltinProblem problem;
    Numerics num;
    std::vector<Vec> points;
    std::vector<Vec> xi0s;
    std::string output = "out";
};

[[noreturn]] void config_error(const std::string& what) {
    std::cerr << "config error: " << what << "\n";
    std::exit(2);
}

Vec to_vec(const json& arr, const char* field) {
    if (!arr.is_array() || arr.empty())
        config_error(std::string(field) + " must be a non-empty array");
    Vec v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) config_error(std::string(field) + " must hold numbers");
        v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    }
    return v;
}

Config load_config(const std::string& path) {
    Config cfg;
    std::ifstream is(path);
    if (!is) config_error("cannot open " + path);
    try {
        cfg.raw = json::parse(is);
    } catch (const json::parse_error& e) {
        config_error(std::string("json parse failure: ") + e.what());
    }

    if (!cfg.raw.contains("problem")) config_error("missing field: problem");
    const json& prob = cfg.raw["problem"];
    try {
        if (prob.contains("builtin")) {
            cfg.problem = make_builtin(prob["builtin"].get<std::string>());
        } else if (prob.contains("family")) {
            const std::string fam = prob["family"].get<std::string>();
            if (fam != "power_1d") config_error("unknown problem family: " + fam);
            cfg.problem =
                make_power_1d(prob.value("sigma1", 1.0), prob.value("b1", 0.3),
                              prob.value("c", 1.0), prob.value("x_lo", 1.0), prob.value("x_hi", 2.0));
        } else {
            config_error("problem needs either 'builtin' or 'family'");
        }
    } catch (const std::exception& e) {
        config_error(std::string("problem: ") + e.what());
    }

    if (cfg.raw.contains("numerics")) {
        const json& n = cfg.raw["numerics"];
        Numerics& d = cfg.num;
        d.h = n.value("h", d.h);
        d.n_paths = n.value("n_paths", d.n_paths);
        d.t_max = n.value("t_max", d.t_max);
        if (n.contains("seed")) {
            d.seed = n["seed"].get<std::uint64_t>();
            d.seed_set = true;
        }
        if (n.contains("deltas")) d.deltas = n["deltas"].get<std::vector<double>>();
        if (n.contains("lambda")) d.lambda = n["lambda"].get<double>();
        if (n.contains("delta1")) d.delta1 = n["delta1"].get<double>();
        d.K1 = n.value("K1", d.K1);
        d.clip_n = n.value("clip_n", d.clip_n);
        if (n.contains("beta")) d.beta = n["beta"].get<double>();
        d.moment_order = n.value("moment_order", d.moment_order);
        d.threads = n.value("threads", d.threads);
        d.method = n.value("method", d.method);
        if (n.contains("checkpoints")) d.checkpoints = n["checkpoints"].get<std::vector<double>>();
        if (!(d.h > 0)) config_error("numerics.h must be positive");
        if (d.n_paths < 1) config_error("numerics.n_paths must be >= 1");
    }
    if (cfg.raw.contains("points")) {
        for (const auto& pt : cfg.raw["points"]) {
            if (!pt.contains("x")) config_error("points[].x required");
            cfg.points.push_back(to_vec(pt["x"], "points[].x"));
            if (pt.contains("xi0"))
                cfg.xi0s.push_back(to_vec(pt["xi0"], "points[].xi0"));
            else
                cfg.xi0s.push_back(Vec::Unit(cfg.problem.spec.d, 0));
        }
    }
    cfg.output = cfg.raw.value("output", cfg.output);

    if (cfg.num.lambda) cfg.problem.dom.lambda = *cfg.num.lambda;
    if (cfg.num.delta1) cfg.problem.dom.delta1 = *cfg.num.delta1;
    if (cfg.num.beta) cfg.problem.spec.beta = *cfg.num.beta;
    try {
        cfg.problem.dom.validate();
    } catch (const std::exception& e) {
        config_error(e.what());
    }
    return cfg;
}

json vec_json(const Vec& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

// Gate before every experiment: the sample-grid hypotheses plus, for drivers
// that actually depend on (y, z), the (H7) window.
struct GateResult {
    bool pass = true;
    json report;
};

GateResult hypothesis_gate(const BuiltinProblem& p) {
    GateResult out;
    const auto grid = sample_interior_grid(p.dom, 17, false);
    const HypothesisReport rep = validate_hypotheses(p.spec, p.dom, grid);
    const H7Report h7 = check_h7(p.spec.mu, p.spec.L, p.spec.L0, p.spec.beta, p.spec.vartheta);
    auto check_json = [](const HypothesisCheck& c) {
        json j;
        j["name"] = c.name;
        j["pass"] = c.pass;
        j["margin"] = c.margin;
        j["witness"] = vec_json(c.witness);
        j["detail"] = c.detail;
        return j;
    };
    out.report["h2"] = check_json(rep.h2);
    out.report["h3"] = check_json(rep.h3);
    out.report["h9"] = check_json(rep.h9);
    json h7j;
    h7j["pass"] = h7.pass;
    h7j["mu_window"] = h7.mu_window;
    h7j["beta_window"] = h7.beta_window;
    h7j["vartheta_consistent"] = h7.vartheta_consistent;
    h7j["detail"] = h7.detail;
    h7j["applies"] = !p.driver_free_legal;
    out.report["h7"] = h7j;
    out.pass = rep.all_pass() && (p.driver_free_legal || h7.pass);

    std::vector<std::pair<Vec, Vec>> samples;
    for (const Vec& x : sample_interior_grid(p.dom, 9, false)) {
        Vec y(p.spec.d);
        for (int i = 0; i < p.spec.d; ++i) y[i] = std::cos(1.0 + x[0] + i);
        y.normalize();
        samples.emplace_back(x, y);
    }
    json h10;
    for (double order : {1.0, 2.0}) {
        const H10Report r = check_h10(p.spec, p.dom, p.interior, order, p.spec.beta, samples);
        json rj;
        rj["pass"] = r.pass;
        rj["worst_margin"] = r.worst_margin;
        h10[order == 1.0 ? "p1" : "p2"] = rj;
    }
    out.report["h10"] = h10;
    return out;
}

void write_outputs(const std::string& out_dir, const std::string& experiment, const json& body,
                   const json& config) {
    std::filesystem::create_directories(out_dir);
    json report;
    report["experiment"] = experiment;
    report["config"] = config;
    report["results"] = body;
    {
        std::ofstream os(out_dir + "/report.json");
        os << report.dump(2) << "\n";
    }
    // Timestamps live in a separate file so report bodies stay byte-stable
    // across reruns with the same seed.
    json meta;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    meta["written_unix_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    meta["tool"] = "qdbsde";
    std::ofstream ms(out_dir + "/metadata.json");
    ms << meta.dump(2) << "\n";
}

BsdeMethod pick_method(const Config& cfg) {
    if (cfg.num.method == "driver-free") return BsdeMethod::DriverFree;
    if (cfg.num.method == "picard") return BsdeMethod::Picard;
    if (cfg.num.method == "auto")
        return cfg.problem.driver_free_legal ? BsdeMethod::DriverFree : BsdeMethod::Picard;
    config_error("numerics.method must be auto | driver-free | picard");
}

int run_solve(const Config& cfg, json& body) {
    const auto method = pick_method(cfg);
    json rows = json::array();
    bool ok = true;
    for (std::size_t i = 0; i < cfg.points.size(); ++i) {
        SimOptions sim;
        sim.h = cfg.num.h;
        sim.t_max = cfg.num.t_max;
        sim.n_paths = cfg.num.n_paths;
        sim.seed = cfg.num.seed + i;
        sim.threads = cfg.num.threads;
        sim.store = method == BsdeMethod::Picard;
        const PathEnsemble ens =
            simulate_ensemble(cfg.problem.spec, cfg.problem.dom, cfg.points[i], sim);
        const BsdeSolution sol =
            method == BsdeMethod::Picard
                ? solve_picard(ens, cfg.problem.spec, cfg.problem.dom, {})
                : estimate_u_driver_free(ens, cfg.problem.spec, cfg.problem.dom);
        json row;
        row["x0"] = vec_json(cfg.points[i]);
        row["Y0"] = vec_json(sol.y0);
        row["CI"] = vec_json(sol.ci95);
        row["method"] = method == BsdeMethod::Picard ? "picard" : "driver-free";
        row["h"] = ens.h;
        row["n_paths"] = ens.n_paths;
        row["seed"] = sim.seed;
        row["converged"] = sol.converged;
        row["h7_ok"] = sol.h7_ok;
        row["capped_bias_bound"] = sol.capped_bias_bound;
        if (cfg.problem.has_analytic)
            row["analytic"] = vec_json(cfg.problem.analytic.u(cfg.points[i]));
        ok = ok && sol.converged;
        rows.push_back(row);
        std::cout << "solve at [" << cfg.points[i].transpose() << "]: Y0 = " << sol.y0.transpose()
                  << " (+- " << sol.ci95.transpose() << ")\n";
    }
    body["rows"] = rows;
    return ok ? 0 : 1;
}

int run_quotient(const Config& cfg, json& body, bool second_order) {
    json rows = json::array();
    bool ok = true;
    for (std::size_t i = 0; i < cfg.points.size(); ++i) {
        EstimatorOptions opts;
        opts.deltas = cfg.num.deltas;
        opts.h = cfg.num.h;
        opts.t_max = cfg.num.t_max;
        opts.n_paths = cfg.num.n_paths;
        opts.seed = cfg.num.seed + i;
        opts.clip_n = cfg.num.clip_n;
        opts.method = pick_method(cfg);
        opts.moment_order = cfg.num.moment_order;
        opts.threads = cfg.num.threads;
        const double psi = cfg.problem.dom.psi(cfg.points[i]);
        opts.scheme = psi > cfg.problem.dom.lambda * cfg.problem.dom.lambda
                          ? SchemeKind::Interior
                          : SchemeKind::Boundary;
        const QuotientReport rep =
            second_order ? hessian_estimate(cfg.problem.spec, cfg.problem.dom,
                                            &cfg.problem.interior, cfg.points[i], cfg.xi0s[i], opts)
                         : grad_estimate(cfg.problem.spec, cfg.problem.dom, &cfg.problem.interior,
                                         cfg.points[i], cfg.xi0s[i], opts);
        json row;
        row["x"] = vec_json(cfg.points[i]);
        row["xi0"] = vec_json(cfg.xi0s[i]);
        row["delta"] = rep.deltas;
        json quotients = json::array();
        for (const auto& q : rep.quotients) quotients.push_back(vec_json(q));
        row["quotient"] = quotients;
        row["extrapolated"] = vec_json(rep.estimate);
        row["CI"] = vec_json(rep.ci95);
        row["verdict"] = rep.verdict;
        row["guard_violation_rate"] = rep.guard_violation_rate;
        row["capped_rate"] = rep.capped_rate;
        if (cfg.problem.has_analytic) {
            const Vec oracle =
                second_order
                    ? cfg.problem.analytic.u_dir2(cfg.points[i], cfg.xi0s[i], cfg.xi0s[i])
                    : cfg.problem.analytic.u_dir(cfg.points[i], cfg.xi0s[i]);
            row["analytic"] = vec_json(oracle);
        }
        ok = ok && rep.verdict == "converged";
        rows.push_back(row);
        std::cout << (second_order ? "hess" : "grad") << " at [" << cfg.points[i].transpose()
                  << "]: " << rep.estimate.transpose() << " (+- " << rep.ci95.transpose() << ") ["
                  << rep.verdict << "]\n";
    }
    body["rows"] = rows;
    return ok ? 0 : 1;
}

int run_verify_barriers(const Config& cfg, json& body) {
    const BuiltinProblem& p = cfg.problem;
    const LambdaCalibration cal = calibrate_ordering_lambda(p.dom, cfg.num.K1);
    json cal_json;
    cal_json["lambda_ordering"] = cal.lambda;
    cal_json["halvings"] = cal.halvings;
    cal_json["ok"] = cal.ok;
    cal_json["margin_on_lambda"] = cal.ordering.worst_margin_on_lambda;
    cal_json["margin_on_lambda2"] = cal.ordering.worst_margin_on_lambda2;
    body["ordering_calibration"] = cal_json;

    SupermartingaleOptions pilot;
    pilot.n_paths = std::min<std::size_t>(cfg.num.n_paths, 3000);
    pilot.h = cfg.num.h;
    pilot.seed = cfg.num.seed;
    pilot.clip_n = cfg.num.clip_n;
    pilot.threads = cfg.num.threads;
    const BarrierConstants bc =
        calibrate_supermartingale_constants(p.spec, p.dom, &p.interior, 0.5, pilot);
    json bc_json;
    bc_json["ok"] = bc.ok;
    bc_json["lambda_sm"] = bc.lambda_sm;
    bc_json["delta1"] = bc.delta1;
    bc_json["K1"] = bc.K1;
    body["supermartingale_calibration"] = bc_json;
    if (!bc.ok) {
        std::cout << "verify-barriers: calibration failed\n";
        return 1;
    }

    DomainSpec dm = p.dom;
    dm.lambda = bc.lambda_sm;
    dm.delta1 = bc.delta1;
    const Vec x0_boundary = sample_level_set(dm, 0.5 * bc.lambda_sm, 1).front();
    Vec xi0;
    if (p.spec.d == 1) {
        xi0 = Vec::Ones(1);
    } else {
        const Vec grad = dm.psi_grad(x0_boundary);
        xi0 = Vec::Zero(p.spec.d);
        xi0[0] = -grad[1];
        xi0[1] = grad[0];
        xi0.normalize();
    }
    Vec x0_interior;
    double best = -1;
    for (const Vec& x : sample_interior_grid(dm, 17, false))
        if (dm.psi(x) > best) {
            best = dm.psi(x);
            x0_interior = x;
        }

    bool all_pass = true;
    json rows = json::array();
    for (BarrierKind kind : {BarrierKind::B1, BarrierKind::B2, BarrierKind::B3, BarrierKind::B4}) {
        BarrierSpec bs;
        bs.kind = kind;
        bs.lambda = bc.lambda_sm;
        bs.K1 = bc.K1;
        bs.p = (kind == BarrierKind::B1 || kind == BarrierKind::B2) ? 1.0 : 2.0;
        const bool boundary = bs.is_boundary_kind();
        SupermartingaleOptions opts = pilot;
        opts.n_paths = cfg.num.n_paths;
        opts.seed = cfg.num.seed + 1000 + static_cast<std::uint64_t>(kind);  // fresh seeds
        std::vector<double> cps;
        if (boundary) {
            opts.h = std::min(cfg.num.h, boundary_stable_h(p.spec, dm, bs.moment_order()));
            const double t_scale = dm.psi(x0_boundary);
            cps = {0.1 * t_scale, 0.2 * t_scale, 0.4 * t_scale};
        } else {
            cps = cfg.num.checkpoints;
        }
        const auto rep = supermartingale_test(bs, p.spec, dm, &p.interior,
                                              boundary ? x0_boundary : x0_interior, xi0, cps, opts);
        json row;
        row["barrier"] = boundary ? (bs.p == 1.0 ? "B1" : "B3") : (bs.p == 1.0 ? "B2" : "B4");
        row["scheme"] = boundary ? "boundary" : "interior";
        row["x0"] = vec_json(rep.x0);
        row["xi0"] = vec_json(rep.xi0);
        row["checkpoints"] = cps;
        json zs = json::array(), zs_sqrt = json::array();
        for (const auto& r : rep.rows) {
            zs.push_back(r.z);
            zs_sqrt.push_back(r.z_sqrt);
        }
        row["z"] = zs;
        row["z_sqrt"] = zs_sqrt;
        row["verdict"] = (rep.pass_base && rep.pass_sqrt) ? "pass" : "fail";
        row["lambda"] = bs.lambda;
        row["K1"] = bs.K1;
        row["n"] = opts.n_paths;
        row["seed"] = opts.seed;
        row["clip_rate"] = rep.clip_rate;
        row["flagged_rate"] = rep.flagged_rate;
        if (boundary) {
            row["moment_integral_mean"] = rep.moment_integral_mean;
            row["moment_integral_se"] = rep.moment_integral_se;
            row["b0"] = rep.b0;
        }
        all_pass = all_pass && rep.pass_base && rep.pass_sqrt;
        rows.push_back(row);
        std::cout << "barrier " << row["barrier"].get<std::string>() << ": "
                  << row["verdict"].get<std::string>() << "\n";
    }
    body["tests"] = rows;
    body["ordering_pass"] = cal.ok;
    return (all_pass && cal.ok) ? 0 : 1;
}

int run_verify_quasi(const Config& cfg, json& body) {
    const BuiltinProblem& p = cfg.problem;
    if (p.spec.d != 2) {
        std::cout << "verify-quasi: the harmonic panel is defined for d = 2 problems\n";
        return 1;
    }
    SimOptions sim;
    sim.h = cfg.num.h;
    double cp_max = 0;
    for (double t : cfg.num.checkpoints) cp_max = std::max(cp_max, t);
    sim.t_max = cp_max + 2 * cfg.num.h;
    sim.n_paths = cfg.num.n_paths;
    sim.seed = cfg.num.seed;
    sim.threads = cfg.num.threads;
    const Vec x0 = cfg.points.empty() ? Vec(Vec::Zero(2)) : cfg.points[0];
    const Vec xi0 = cfg.xi0s.empty() ? Vec(Vec::Unit(2, 0)) : cfg.xi0s[0];
    const PathEnsemble ens = simulate_ensemble(p.spec, p.dom, x0, sim);

    QuasiOptions qo;
    qo.scheme = SchemeKind::Interior;
    qo.evolve_eta = true;
    qo.clip_n = cfg.num.clip_n;

    std::vector<TestFunction> panel;
    panel.push_back({"1", [](const Vec&) { return 1.0; },
                     [](const Vec&) { return Vec(Vec::Zero(2)); },
                     [](const Vec&) { return Mat(Mat::Zero(2, 2)); }});
    panel.push_back({"x1", [](const Vec& x) { return x[0]; },
                     [](const Vec&) { return Vec(Vec::Unit(2, 0)); },
                     [](const Vec&) { return Mat(Mat::Zero(2, 2)); }});
    panel.push_back({"x2", [](const Vec& x) { return x[1]; },
                     [](const Vec&) { return Vec(Vec::Unit(2, 1)); },
                     [](const Vec&) { return Mat(Mat::Zero(2, 2)); }});
    panel.push_back({"x1^2-x2^2", [](const Vec& x) { return x[0] * x[0] - x[1] * x[1]; },
                     [](const Vec& x) {
                         Vec g(2);
                         g << 2 * x[0], -2 * x[1];
                         return g;
                     },
                     [](const Vec&) {
                         Mat m(2, 2);
                         m << 2, 0, 0, -2;
                         return m;
                     }});
    panel.push_back({"x1*x2", [](const Vec& x) { return x[0] * x[1]; },
                     [](const Vec& x) {
                         Vec g(2);
                         g << x[1], x[0];
                         return g;
                     },
                     [](const Vec&) {
                         Mat m(2, 2);
                         m << 0, 1, 1, 0;
                         return m;
                     }});

    bool all_pass = true;
    json rows = json::array();
    for (const auto& v : panel) {
        const MartingaleReport rep =
            martingale_statistic(v, ens, p.spec, p.dom, &p.interior, xi0, qo, cfg.num.checkpoints);
        for (const auto& r : rep.rows) {
            json row;
            row["v"] = v.name;
            row["checkpoint"] = r.t;
            row["mean"] = r.mean_first;
            row["stderr"] = r.se_first;
            row["z"] = r.z_first;
            row["mean_second"] = r.mean_second;
            row["stderr_second"] = r.se_second;
            row["z_second"] = r.z_second;
            rows.push_back(row);
        }
        all_pass = all_pass && rep.pass(3.0);
        std::cout << "martingale v=" << v.name << ": " << (rep.pass(3.0) ? "pass" : "fail") << "\n";
    }
    body["martingale"] = rows;
    body["pass"] = all_pass;
    return all_pass ? 0 : 1;
}

int run_verify_bounds(const Config& cfg, json& body, const std::string& out_dir) {
    const BuiltinProblem& p = cfg.problem;
    NormConfig ncfg;
    ncfg.resolution = 33;
    ncfg.seed = cfg.num.seed;
    const NormReport norms = compute_norms(p.spec, p.dom, ncfg);
    json njson;
    njson["g0"] = norms.g0;
    njson["g1"] = norms.g1;
    njson["g2"] = norms.g2;
    njson["g01"] = norms.g01;
    njson["g11"] = norms.g11;
    njson["f00"] = norms.f00;
    njson["f01"] = norms.f01;
    njson["f11"] = norms.f11;
    njson["lower_bound_estimates"] = norms.lower_bound_estimates;
    body["norms"] = njson;

    std::vector<Vec> panel = cfg.points;
    std::vector<Vec> dirs = cfg.xi0s;
    if (panel.empty()) {
        const auto shells = {0.9, 0.75, 0.6, 0.45, 0.3, 0.2, 0.12, 0.07, 0.04, 0.02};
        const double sup = psi_sup_estimate(p.dom);
        int i = 0;
        for (double frac : shells) {
            for (const Vec& x : sample_level_set(p.dom, frac * sup, 3)) {
                panel.push_back(x);
                dirs.push_back(Vec::Unit(p.spec.d, i % p.spec.d));
                ++i;
            }
        }
    }

    VerifyBoundsOptions vopts;
    vopts.source = p.has_analytic ? DerivativeSource::Analytic : DerivativeSource::Perturbed;
    vopts.estimator.seed = cfg.num.seed;
    vopts.estimator.n_paths = cfg.num.n_paths;
    vopts.estimator.threads = cfg.num.threads;

    bool ok = true;
    std::string csv = "order,x,xi0,measured,shape,ratio,split\n";
    for (int order : {1, 2}) {
        const BoundReport rep = verify_bounds(order, p, norms, panel, dirs, vopts);
        json rj;
        rj["order"] = order;
        rj["N_calibrated"] = rep.n_calibrated;
        rj["holdout_max_ratio"] = rep.holdout_max_ratio;
        rj["pass"] = rep.pass;
        rj["norms_factor"] = rep.norms_factor;
        body[order == 1 ? "order1" : "order2"] = rj;
        ok = ok && rep.pass;
        for (std::size_t i = 0; i < rep.points.size(); ++i) {
            const bool cal =
                std::find(rep.calibration_indices.begin(), rep.calibration_indices.end(), i) !=
                rep.calibration_indices.end();
            std::ostringstream line;
            line << order << ",\"";
            for (Eigen::Index c = 0; c < rep.points[i].size(); ++c)
                line << (c ? ";" : "") << rep.points[i][c];
            line << "\",\"";
            for (Eigen::Index c = 0; c < rep.directions[i].size(); ++c)
                line << (c ? ";" : "") << rep.directions[i][c];
            line << "\"," << rep.measured[i] << "," << rep.shape[i] << ","
                 << (rep.shape[i] * rep.norms_factor > 0
                         ? rep.measured[i] / (rep.shape[i] * rep.norms_factor)
                         : 0.0)
                 << "," << (cal ? "calibration" : "holdout") << "\n";
            csv += line.str();
        }
        std::cout << "bounds order " << order << ": " << (rep.pass ? "pass" : "fail")
                  << " (N = " << rep.n_calibrated << ")\n";
    }
    std::filesystem::create_directories(out_dir);
    std::ofstream cs(out_dir + "/bounds.csv");
    cs << csv;

    const Vec yb = sample_level_set(p.dom, 0.0, 1).front();
    NormalDerivativeOptions nopts;
    nopts.seed = cfg.num.seed + 77;
    nopts.n_paths = std::min<std::size_t>(cfg.num.n_paths, 20000);
    nopts.threads = cfg.num.threads;
    nopts.method = pick_method(cfg);
    const NormalDerivativeReport nd = normal_derivative_bound(p.spec, p.dom, norms, yb, nopts);
    json ndj;
    ndj["y"] = vec_json(nd.y);
    ndj["measured"] = nd.measured;
    ndj["ci"] = nd.measured_ci;
    ndj["bound"] = nd.bound;
    ndj["N_calibrated"] = nd.n_calibrated;
    ndj["verdict"] = nd.verdict;
    body["normal_derivative"] = ndj;
    ok = ok && nd.verdict == "pass";
    std::cout << "normal derivative at boundary: " << nd.verdict << " (|u_(n)| = " << nd.measured
              << ")\n";
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"first-exit BSDE / quasi-derivative simulation harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::int64_t seed_override = -1;
    bool force = false;

    const std::vector<std::string> experiments = {
        "solve", "grad", "hess", "verify-barriers", "verify-quasi", "verify-bounds", "hypotheses"};
    std::map<std::string, CLI::App*> subs;
    for (const auto& name : experiments) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "config file (json)")->required();
        sub->add_option("--seed", seed_override, "override numerics.seed");
        sub->add_option("--out", out_override, "override output directory");
        sub->add_flag("--force", force, "proceed despite hypothesis failures");
        subs[name] = sub;
    }
    CLI11_PARSE(app, argc, argv);
    std::string experiment;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) experiment = name;

    Config cfg = load_config(config_path);
    if (seed_override >= 0) {
        cfg.num.seed = static_cast<std::uint64_t>(seed_override);
        cfg.num.seed_set = true;
    }
    if (!cfg.num.seed_set) config_error("a seed is mandatory (numerics.seed or --seed)");
    if (!out_override.empty()) cfg.output = out_override;
    if (cfg.points.empty() &&
        (experiment == "solve" || experiment == "grad" || experiment == "hess"))
        config_error("experiment '" + experiment + "' needs at least one entry in points");

    json resolved = cfg.raw;
    resolved["numerics"]["seed"] = cfg.num.seed;
    resolved["output"] = cfg.output;

    try {
        const GateResult gate = hypothesis_gate(cfg.problem);
        if (experiment == "hypotheses") {
            json body;
            body["hypotheses"] = gate.report;
            body["pass"] = gate.pass;
            write_outputs(cfg.output, experiment, body, resolved);
            std::cout << "hypotheses: " << (gate.pass ? "pass" : "fail") << "\n";
            return gate.pass ? 0 : 3;
        }
        if (!gate.pass && !force) {
            std::cerr << "hypothesis gate failed (rerun with --force to proceed): "
                      << gate.report.dump() << "\n";
            return 3;
        }

        json body;
        body["hypothesis_gate"] = gate.report;
        int status = 1;
        if (experiment == "solve")
            status = run_solve(cfg, body);
        else if (experiment == "grad")
            status = run_quotient(cfg, body, false);
        else if (experiment == "hess")
            status = run_quotient(cfg, body, true);
        else if (experiment == "verify-barriers")
            status = run_verify_barriers(cfg, body);
        else if (experiment == "verify-quasi")
            status = run_verify_quasi(cfg, body);
        else if (experiment == "verify-bounds")
            status = run_verify_bounds(cfg, body, cfg.output);
        write_outputs(cfg.output, experiment, body, resolved);
        return status;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
