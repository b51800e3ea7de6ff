#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "support/grid_oracle.hpp"
#include "support/qp_oracle.hpp"
#include "support/smib.hpp"
#include "support/surrogate_oracle.hpp"
#include "support/ttc_oracle.hpp"

#include "tcop/dataset/dataset.hpp"
#include "tcop/grid/case_io.hpp"
#include "tcop/planner/planner.hpp"
#include "tcop/surrogate/surrogate.hpp"

using namespace tcop;
using namespace tcop::testing;
using Eigen::Index;
using Eigen::VectorXd;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Inputs {
    std::string data_dir;
    int jobs = 1;
    bool train = true;

    std::string path(const std::string& name) const { return data_dir + "/" + name; }
    grid::NetworkCase network() const { return grid::load_case(path("ieee39_wind_ess.json")); }
    planner::Scenario scenario(const grid::NetworkCase& c) const {
        std::ifstream in(path("scenario_48h.json"));
        return planner::Scenario::from_json(nlohmann::json::parse(in), c);
    }
    ttc::TtcSearchConfig verification() const {
        std::ifstream in(path("ieee39_wind_ess.json"));
        ttc::TtcSearchConfig cfg;
        cfg.contingencies = dynamics::contingencies_from_json(nlohmann::json::parse(in));
        cfg.tolerance = 0.0025;
        cfg.lambda_floor = -0.6;
        return cfg;
    }
};

// ---------------------------------------------------------------------------

Verdict derivative_exactness() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(7);
    using surrogate::Activation;
    using surrogate::Family;
    struct Arch {
        Family family;
        std::vector<Index> hidden;
        Activation act;
    };
    const std::vector<Arch> archs = {{Family::elastic_net, {}, Activation::sigmoid},
                                     {Family::slnn, {12}, Activation::sigmoid},
                                     {Family::slnn, {9}, Activation::softplus},
                                     {Family::dlnn, {10, 6}, Activation::sigmoid},
                                     {Family::dlnn, {10, 8, 6}, Activation::sigmoid},
                                     {Family::dlnn, {8, 6, 5, 4, 3}, Activation::softplus}};
    double worst_j = 0.0, worst_h = 0.0, worst_sym = 0.0;
    int pairs = 0;
    for (int k = 0; k < 120; ++k) {
        const auto& a = archs[static_cast<std::size_t>(k) % archs.size()];
        const auto m = random_model(rng, a.family, a.hidden, a.act, 8, 4);
        const VectorXd x = m.input_norm.mean + uniform(rng, 8, 1, -2.5, 2.5);
        worst_j = std::max(worst_j, rel_max(m.jacobian(x), fd_jacobian(m, x, 1e-5)));
        for (std::size_t out = 0; out < m.outputs(); ++out) {
            const auto h = m.hessian(x, out);
            worst_sym = std::max(worst_sym, (h - h.transpose()).cwiseAbs().maxCoeff());
            if (a.family != Family::elastic_net) worst_h = std::max(worst_h, rel_max(h, fd_hessian(m, x, out, 1e-5)));
        }
        ++pairs;
    }
    const double secs = since(t0);
    return {pairs >= 100 && worst_j <= 1e-6 && worst_h <= 1e-5 && worst_sym <= 1e-12 && secs < 60.0,
            fmt("%d pairs, jacobian rel %.2e, hessian rel %.2e, symmetry %.1e, %.1f s", pairs, worst_j, worst_h,
                worst_sym, secs)};
}

Verdict depth_reduction() {
    std::mt19937_64 rng(11);
    double worst = 0.0;
    int cases = 0;
    for (auto act : {surrogate::Activation::sigmoid, surrogate::Activation::softplus}) {
        for (int k = 0; k < 25; ++k) {
            const auto m = random_model(rng, surrogate::Family::slnn, {11}, act, 14, 4);
            const VectorXd z = uniform(rng, 14, 1, -2, 2);
            worst = std::max(worst, (surrogate::dlnn_jacobian(m.layers, act, z) -
                                     surrogate::slnn_jacobian(m.layers, act, z))
                                        .cwiseAbs()
                                        .maxCoeff());
            for (std::size_t out = 0; out < 4; ++out) {
                worst = std::max(worst, (surrogate::dlnn_hessian(m.layers, act, z, out) -
                                         surrogate::slnn_hessian(m.layers, act, z, out))
                                            .cwiseAbs()
                                            .maxCoeff());
            }
            ++cases;
        }
    }
    return {worst == 0.0, fmt("%d networks, max abs difference %.1e", cases, worst)};
}

Verdict ipm_correctness() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> dim(2, 20);
    ipm::IpmOptions o;
    o.gap_tolerance = 1e-10;
    o.feasibility_tolerance = 1e-10;
    o.stationarity_tolerance = 1e-10;
    double worst = 0.0;
    int solved = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Index n = dim(rng);
        const Index m = std::min<Index>(trial % 4, n - 1);
        const Index r = 1 + trial % 8;
        const Qp p = random_qp(rng, n, m, r);
        const VectorXd oracle = active_set_oracle(p);
        const auto prob = p.problem();
        const auto res = ipm::solve(prob, VectorXd::Zero(n), o);
        if (!res.ok() || oracle.size() != n) continue;
        ++solved;
        worst = std::max(worst, (res.x - oracle).lpNorm<Eigen::Infinity>());
    }

    // min x^2 subject to x >= 1: x = 1, bound multiplier 2.
    Qp bound;
    bound.q = 2.0 * Eigen::MatrixXd::Identity(1, 1);
    bound.c = VectorXd::Zero(1);
    bound.a = Eigen::MatrixXd(0, 1);
    bound.b = VectorXd(0);
    bound.g = Eigen::MatrixXd::Ones(1, 1);
    bound.lo = VectorXd::Ones(1);
    bound.hi = VectorXd::Constant(1, ipm::kInf);
    const auto bp = bound.problem();
    const auto b = ipm::solve(bp, VectorXd::Constant(1, 3.0), o);
    const bool hand1 = b.ok() && std::abs(b.x[0] - 1.0) < 1e-6 && std::abs(b.z[0] - 2.0) < 1e-5;

    // min (x-2)^2 + (y-1)^2 subject to x + y = 2, x <= 1: (1, 1), multipliers 0 and 2.
    Qp eq;
    eq.q = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    eq.c = VectorXd(2);
    eq.c << -4.0, -2.0;
    eq.a = Eigen::MatrixXd::Ones(1, 2);
    eq.b = VectorXd::Constant(1, 2.0);
    eq.g = Eigen::MatrixXd(1, 2);
    eq.g << 1.0, 0.0;
    eq.lo = VectorXd::Constant(1, -ipm::kInf);
    eq.hi = VectorXd::Ones(1);
    const auto ep = eq.problem();
    const auto e = ipm::solve(ep, VectorXd::Zero(2), o);
    const bool hand2 = e.ok() && std::abs(e.x[0] - 1.0) < 1e-6 && std::abs(e.x[1] - 1.0) < 1e-6 &&
                       std::abs(e.y[0]) < 1e-5 && std::abs(e.w[0] - 2.0) < 1e-5;

    const double secs = since(t0);
    return {solved == 50 && worst <= 1e-6 && hand1 && hand2 && secs < 60.0,
            fmt("%d/50 QPs solved, worst deviation %.2e, hand examples %s/%s, %.1f s", solved, worst,
                hand1 ? "ok" : "wrong", hand2 ? "ok" : "wrong", secs)};
}

Verdict power_flow(const Inputs& in) {
    const auto c = in.network();
    const auto flat = grid::OperatingPoint::flat_start(c);
    const auto res = grid::solve_power_flow(c, flat);
    const auto oracle = oracle_power_flow(c, flat);
    auto ref = res.point;
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        ref.vm[i] = std::abs(oracle.v[static_cast<Index>(i)]);
        ref.va[i] = std::arg(oracle.v[static_cast<Index>(i)]);
    }
    double worst = 0.0;
    for (const auto& l : c.lines) {
        worst = std::max(worst, std::abs(grid::line_flow(c, res.point, l.id) - grid::line_flow(c, ref, l.id)));
        worst = std::max(worst,
                         std::abs(grid::line_flow(c, res.point, l.id, l.to) - grid::line_flow(c, ref, l.id, l.to)));
    }
    return {res.iterations <= 10 && res.max_mismatch <= 1e-8 && worst <= 1e-6,
            fmt("%d iterations, mismatch %.1e p.u., worst flow deviation %.1e p.u.", res.iterations,
                res.max_mismatch, worst)};
}

Verdict transient_oracle() {
    const auto c = smib();
    const auto p = smib_point(c);
    const auto e = smib_emf(p);
    const double t_eac = eac_critical_time(std::abs(e), std::arg(e));
    double lo = 0.01, hi = 0.6;
    if (!smib_stable(c, p, lo) || smib_stable(c, p, hi)) return {false, "clearing-time bracket not established"};
    while (hi - lo > 1e-3) {
        const double mid = 0.5 * (lo + hi);
        (smib_stable(c, p, mid) ? lo : hi) = mid;
    }
    const double t_sim = 0.5 * (lo + hi);
    const bool brackets = smib_stable(c, p, t_eac - 0.05) && !smib_stable(c, p, t_eac + 0.05);
    return {std::abs(t_sim - t_eac) <= 0.05 && brackets,
            fmt("simulated %.4f s, equal-area %.4f s, stable at -0.05 s and unstable at +0.05 s: %s", t_sim, t_eac,
                brackets ? "yes" : "no")};
}

Verdict ttc_search() {
    int runs = 0, agree = 0, invariant = 0;
    double worst = 0.0;
    for (double sink : {1.6, 2.0, 2.4}) {
        for (double clearing : {0.12, 0.15, 0.2}) {
            auto c = three_bus();
            c.buses[2].pd = sink;
            const auto p = solved(c);
            auto cfg = three_bus_config();
            cfg.tolerance = 0.01;
            cfg.contingencies[0].clearing_time = clearing;
            const auto r = ttc::compute_ttc(c, p, cfg);
            double last = -1.0;
            for (int k = 0; k * cfg.tolerance <= cfg.lambda_cap + 1e-12; ++k) {
                if (!feasible_at(c, p, k * cfg.tolerance, cfg)) break;
                last = k * cfg.tolerance;
            }
            ++runs;
            const double d = std::abs(r.lambda - last);
            worst = std::max(worst, d);
            if (last >= 0.0 && d <= cfg.tolerance + 1e-12) ++agree;
            const bool upper = r.binding == "unconstrained" || !feasible_at(c, p, r.lambda + cfg.tolerance, cfg);
            if (feasible_at(c, p, r.lambda, cfg) && upper) ++invariant;
        }
    }
    return {agree == runs && invariant == runs,
            fmt("%d runs, sweep agreement %d, bracket invariant %d, worst |bisection - sweep| %.4f", runs, agree,
                invariant, worst)};
}

// ---------------------------------------------------------------------------

std::string variant_tag(const surrogate::SurrogateModel& m) {
    switch (m.family) {
        case surrogate::Family::elastic_net:
            return "M1";
        case surrogate::Family::slnn:
            return "M2";
        default:
            break;
    }
    const auto prefix = m.activation == surrogate::Activation::softplus ? "M4-" : "M3-";
    return prefix + std::to_string(m.hidden_layers());
}

Verdict learning_ordering(const Inputs& in) {
    const auto data = dataset::TrainingDataset::load(in.path("dataset_39bus.csv"));
    std::vector<std::pair<std::string, double>> mse;
    double seconds = 0.0;
    for (const auto& name : surrogate::preset_names()) {
        if (in.train) {
            const auto t0 = Clock::now();
            const auto m = surrogate::train(data, surrogate::preset(name));
            seconds += since(t0);
            mse.emplace_back(name, surrogate::mse(m, data.test_features(), data.test_targets()));
        } else {
            const auto m = surrogate::SurrogateModel::load(in.path("models/" + name + ".json"));
            mse.emplace_back(name, surrogate::mse(m, data.test_features(), data.test_targets()));
        }
    }
    auto get = [&](const std::string& n) {
        return std::find_if(mse.begin(), mse.end(), [&](const auto& e) { return e.first == n; })->second;
    };
    double best_deep = get("dl2");
    std::string best_name = "dl2";
    for (const auto& n : {"dl3", "dl5"}) {
        if (get(n) < best_deep) {
            best_deep = get(n);
            best_name = n;
        }
    }

    // Projected labelling time for the full dataset from a short run on one worker.
    const auto c = in.network();
    const auto s = in.scenario(c);
    const auto sampling = dataset::SamplingConfig::defaults(c, s.load_history(), 24);
    const auto t0 = Clock::now();
    const auto probe = dataset::build_dataset(c, sampling, in.verification(), 0.85, 1);
    const double per_sample = since(t0) / static_cast<double>(probe.requested);
    const double projected = per_sample * static_cast<double>(data.requested) / 8.0;

    const bool ordering = get("en") > get("slnn") && get("slnn") > best_deep;
    const bool budget = (!in.train || seconds <= 600.0) && projected <= 7200.0;
    std::string detail = fmt("%zu rows (%zu train / %zu test); test MSE", data.rows(), data.n_train,
                             data.rows() - data.n_train);
    for (const auto& [n, v] : mse) detail += fmt(" %s %.6f", n.c_str(), v);
    detail += fmt("; best deep %s; training %s; dataset projected %.0f s on 8 workers", best_name.c_str(),
                  in.train ? fmt("%.0f s", seconds).c_str() : "skipped", projected);
    return {ordering && budget && data.rows() >= 1500, detail};
}

struct Plans {
    grid::NetworkCase c;
    planner::Scenario s;
    ttc::TtcSearchConfig ttc;
    std::shared_ptr<const surrogate::SurrogateModel> best_model;
    planner::DispatchPlan m0, ms, best, ccm;
    std::vector<planner::DispatchPlan> surrogates;
    planner::SecurityReport m0_report, ms_report, best_report, ccm_report;
    std::vector<double> static_limits;
    bool ccm_secure = false;
};

planner::DispatchPlan solve(const Plans& p, const std::string& tag,
                            std::shared_ptr<const surrogate::SurrogateModel> model = nullptr,
                            const std::vector<double>& limits = {}) {
    planner::PlannerConfig cfg;
    cfg.variant = planner::Variant::parse(tag);
    cfg.margin = p.s.margin;
    cfg.model = std::move(model);
    cfg.static_limits = limits;
    cfg.validate(p.c);
    return planner::run_mpc(p.c, p.s, cfg);
}

Plans build_plans(const Inputs& in) {
    Plans p;
    p.c = in.network();
    p.s = in.scenario(p.c);
    p.ttc = in.verification();

    double best_mse = ipm::kInf;
    for (const auto& name : surrogate::preset_names()) {
        auto m = std::make_shared<const surrogate::SurrogateModel>(
            surrogate::SurrogateModel::load(in.path("models/" + name + ".json")));
        if (m->family == surrogate::Family::dlnn && m->training.value("test_mse", ipm::kInf) < best_mse) {
            best_mse = m->training.value("test_mse", ipm::kInf);
            p.best_model = m;
        }
        if (m->family != surrogate::Family::dlnn) p.surrogates.push_back(solve(p, variant_tag(*m), m));
    }
    if (!p.best_model) throw std::runtime_error("no deep model bundled");

    p.m0 = solve(p, "M0");
    p.best = solve(p, variant_tag(*p.best_model), p.best_model);
    p.surrogates.push_back(p.best);

    planner::PlannerConfig base;
    p.static_limits = planner::static_limits(p.c, p.s, planner::initial_condition(p.c, p.s, base), p.ttc);
    p.ms = solve(p, "M-S", nullptr, p.static_limits);

    planner::PlannerConfig ccm_cfg;
    ccm_cfg.margin = p.s.margin;
    auto ccm = planner::run_ccm(p.c, p.s, p.m0, p.ttc, ccm_cfg);
    p.ccm = ccm.plan;
    p.ccm_secure = ccm.secure();

    p.m0_report = planner::verify_plan(p.m0, p.c, p.s, p.ttc, nullptr, in.jobs);
    p.ms_report = planner::verify_plan(p.ms, p.c, p.s, p.ttc, nullptr, in.jobs);
    p.best_report = planner::verify_plan(p.best, p.c, p.s, p.ttc, p.best_model.get(), in.jobs);
    p.ccm_report = planner::verify_plan(p.ccm, p.c, p.s, p.ttc, nullptr, in.jobs);
    return p;
}

Verdict end_to_end(const Plans& p) {
    const auto& m0 = p.m0_report;
    const bool a = p.m0.ok() && m0.ttc_violations() >= 1 && m0.transient_failures() >= 1;

    double worst_hat = -ipm::kInf;
    for (const auto& period : p.best.periods) {
        for (double e : period.margin_hat) worst_hat = std::max(worst_hat, e);
    }
    const auto& best = p.best_report;
    const bool b = p.best.ok() && worst_hat <= -p.best.margin + 1e-6 && best.secure();

    const auto& ms = p.ms_report;
    const bool c = p.ms.ok() && ms.static_failures() == 0 && ms.transient_failures() >= 1;

    return {a && b && c,
            fmt("(a) M0: %d TTC violations, %d transient failures; (b) %s: max margin estimate %.4f p.u., %d TTC "
                "violations, %d transient, %d static failures; (c) M-S: %d static, %d transient failures",
                m0.ttc_violations(), m0.transient_failures(), p.best.variant.c_str(), worst_hat,
                best.ttc_violations(), best.transient_failures(), best.static_failures(), ms.static_failures(),
                ms.transient_failures())};
}

Verdict cost_ordering(const Plans& p) {
    const double m0 = p.m0.total_cost();
    bool lowest = p.m0.ok() && p.ms.ok() && m0 <= p.ms.total_cost() + 1e-6;
    std::string detail = fmt("M0 %.2f $, M-S %.2f $", m0, p.ms.total_cost());
    for (const auto& plan : p.surrogates) {
        lowest = lowest && plan.ok() && m0 <= plan.total_cost() + 1e-6;
        detail += fmt(", %s %.2f $", plan.variant.c_str(), plan.total_cost());
    }
    const bool ccm = p.ccm_secure && p.ccm.total_cost() >= p.best.total_cost() - 1e-6;
    detail += fmt(", CCM %.2f $ (%s, verified %s)", p.ccm.total_cost(), p.ccm_secure ? "all periods corrected" : "some periods not corrected",
                  p.ccm_report.secure() ? "secure" : "insecure");
    return {lowest && ccm, detail};
}

Verdict sensitivity_ranking(const Plans& p) {
    const auto layout = planner::PeriodLayout::of(p.c);
    const auto names = layout.names(p.c);
    int checked = 0, matched = 0;
    std::string example;
    for (const auto& period : p.best.periods) {
        VectorXd x = VectorXd::Zero(layout.size());
        for (std::size_t g = 0; g < p.c.generators.size(); ++g) {
            x[layout.pg(g)] = period.pg[g];
            x[layout.qg(g)] = period.qg[g];
        }
        for (std::size_t w = 0; w < p.c.wind_farms.size(); ++w) x[layout.curtail(w)] = period.curtail[w];
        for (std::size_t e = 0; e < p.c.storage.size(); ++e) {
            x[layout.pe(e)] = period.pe[e];
            x[layout.ee(e)] = period.ee[e];
        }
        for (std::size_t i = 0; i < p.c.buses.size(); ++i) {
            x[layout.vm(i)] = period.vm[i];
            x[layout.va(i)] = period.va[i];
        }
        const auto features = planner::FeatureMap::build(p.c, layout, planner::PeriodForecast::of(p.s, period.hour - 1));
        const auto reduced = planner::ReducedSurrogate::build(*p.best_model, features);
        for (std::size_t k = 0; k < p.c.tie_lines.size(); ++k) {
            const auto& tie = p.c.tie_lines[k];
            const auto& line = p.c.lines[p.c.line_index(tie.line_id)];
            const auto m = planner::surrogate_margin(p.c, layout, reduced, x, k, false);
            const auto ranked = planner::rank_sensitivities(names, m.gradient);
            std::vector<std::string> top{ranked[0].first, ranked[1].first};
            std::vector<std::string> ends{names[static_cast<std::size_t>(layout.va(p.c.bus_index(line.from)))],
                                          names[static_cast<std::size_t>(layout.va(p.c.bus_index(line.to)))]};
            std::sort(top.begin(), top.end());
            std::sort(ends.begin(), ends.end());
            ++checked;
            if (top == ends) ++matched;
            if (example.empty()) {
                example = fmt("hour %d tie %s: %s %.2f, %s %.2f, next %s %.2f", period.hour, tie.line_id.c_str(),
                              ranked[0].first.c_str(), ranked[0].second, ranked[1].first.c_str(), ranked[1].second,
                              ranked[2].first.c_str(), ranked[2].second);
            }
        }
    }
    return {checked > 0 && matched == checked,
            fmt("%d/%d tie-line gradients led by the endpoint angles (%s model); %s", matched, checked,
                p.best.variant.c_str(), example.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
    Inputs in;
    in.data_dir = TCOP_DATA_DIR;
    in.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    CLI::App app{"Acceptance criteria, one PASS/FAIL line each"};
    app.add_option("--data", in.data_dir, "Directory with the bundled case, scenario, dataset and models");
    app.add_option("--jobs", in.jobs, "Worker threads for verification")->check(CLI::PositiveNumber);
    bool no_training = false;
    app.add_flag("--no-training", no_training, "Score the bundled models instead of retraining them");
    std::vector<int> known;
    app.add_option("--known-failure", known, "Criteria whose failure is documented; they still print FAIL")
        ->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);
    in.train = !no_training;

    int failures = 0;
    int unexpected = 0;
    auto report = [&](int id, const std::string& name, const std::function<Verdict()>& check) {
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        if (!v.pass) {
            ++failures;
            if (std::find(known.begin(), known.end(), id) == known.end()) ++unexpected;
        }
        std::printf("%s %2d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str(),
                    since(t0));
        std::fflush(stdout);
    };

    report(1, "derivative exactness", derivative_exactness);
    report(2, "depth reduction", depth_reduction);
    report(3, "interior point correctness", ipm_correctness);
    report(4, "power flow", [&] { return power_flow(in); });
    report(5, "transient oracle", transient_oracle);
    report(6, "transfer capability search", ttc_search);
    report(7, "learning ordering", [&] { return learning_ordering(in); });

    std::optional<Plans> plans;
    std::string plan_error;
    const auto t0 = Clock::now();
    try {
        plans = build_plans(in);
    } catch (const std::exception& e) {
        plan_error = e.what();
    }
    std::printf("      planning runs and verification took %.1f s\n", since(t0));
    auto with_plans = [&](Verdict (*f)(const Plans&)) {
        return [&, f] {
            if (!plans) return Verdict{false, "planning failed: " + plan_error};
            return f(*plans);
        };
    };
    report(8, "end-to-end security", with_plans(end_to_end));
    report(9, "cost ordering", with_plans(cost_ordering));
    report(10, "sensitivity ranking", with_plans(sensitivity_ranking));

    std::printf("%d of 10 criteria failed, %d not listed as known\n", failures, unexpected);
    return unexpected == 0 ? 0 : 1;
}
