#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tcop/dataset/dataset.hpp"
#include "tcop/grid/case_io.hpp"
#include "tcop/planner/planner.hpp"
#include "tcop/planner/scenario.hpp"
#include "tcop/surrogate/surrogate.hpp"

using namespace tcop;

namespace {

constexpr int kInputError = 2;
constexpr int kRunFailure = 1;

class InputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Common {
    int jobs = 1;
    std::string trace;
    std::uint64_t seed = 1;
};

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

grid::NetworkCase read_case(const std::string& path) {
    if (!std::filesystem::exists(path)) throw InputError("case file not found: " + path);
    return grid::load_case(path);
}

nlohmann::json manifest(const std::string& command, const nlohmann::json& inputs, const nlohmann::json& settings,
                        const std::string& out, const Common& common) {
    return {{"subcommand", command},
            {"inputs", inputs},
            {"settings", settings},
            {"output", out},
            {"seed", common.seed},
            {"version", TCOP_VERSION}};
}

ttc::TtcSearchConfig ttc_config(const std::string& case_path, double tolerance, double lambda_floor) {
    ttc::TtcSearchConfig cfg;
    cfg.contingencies = dynamics::contingencies_from_json(read_json(case_path));
    cfg.tolerance = tolerance;
    cfg.lambda_floor = lambda_floor;
    return cfg;
}

planner::Scenario read_scenario(const std::string& path, const grid::NetworkCase& c) {
    if (!std::filesystem::exists(path)) throw InputError("scenario file not found: " + path);
    return planner::Scenario::from_json(read_json(path), c);
}

std::shared_ptr<const surrogate::SurrogateModel> read_model(const std::string& path) {
    if (path.empty()) return nullptr;
    if (!std::filesystem::exists(path)) throw InputError("model file not found: " + path);
    return std::make_shared<const surrogate::SurrogateModel>(surrogate::SurrogateModel::load(path));
}

std::filesystem::path sibling(const std::filesystem::path& p, const std::string& suffix) {
    auto out = p;
    out.replace_filename(p.stem().string() + suffix);
    return out;
}

void prepare_output(const std::filesystem::path& out) {
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
}

void print_report(const planner::SecurityReport& r) {
    std::printf("%4s %10s %3s %8s", "hour", "static", "tr", "lambda");
    for (const auto& t : r.tie_lines) std::printf(" %10s", ("eta:" + t).c_str());
    std::printf("\n");
    for (const auto& p : r.periods) {
        std::printf("%4d %10s %3s %8.4f", p.hour, p.static_violation.empty() ? "ok" : p.static_violation.c_str(),
                    p.transient_stable ? "ok" : "X", p.lambda);
        for (double e : p.eta) std::printf(" %10.2f", e * grid::kBaseMva);
        std::printf("\n");
    }
    std::printf("%s: %d TTC violations, %d transient failures, %d static failures (eta in MW)\n", r.variant.c_str(),
                r.ttc_violations(), r.transient_failures(), r.static_failures());
}

planner::SecurityReport write_report(const planner::DispatchPlan& plan, const grid::NetworkCase& c,
                                     const planner::Scenario& s, const ttc::TtcSearchConfig& cfg,
                                     const surrogate::SurrogateModel* model, const std::filesystem::path& out,
                                     const nlohmann::json& man, int jobs) {
    auto r = planner::verify_plan(plan, c, s, cfg, model, jobs);
    auto j = r.to_json();
    j["manifest"] = man;
    prepare_output(out);
    std::ofstream(out) << j.dump(1) << '\n';
    r.write_csv(sibling(out, ".csv"));
    print_report(r);
    return r;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string case_path;
    std::string scenario_path;
    std::size_t samples = 200;
    std::uint64_t first_index = 1;
    double expansion = 1.2;
    double split = 0.85;
    double lambda_cap = 1.0;
    double lambda_floor = -0.6;
    double tolerance = 0.0025;
    double coarse_step = 0.1;
    std::string out;
};

int cmd_sample(const SampleArgs& a, const Common& common) {
    const auto c = read_case(a.case_path);
    std::vector<std::vector<double>> history;
    if (!a.scenario_path.empty()) history = planner::Scenario::from_json(read_json(a.scenario_path), c).load_history();
    auto sampling = dataset::SamplingConfig::defaults(c, history, a.samples);
    sampling.expansion = a.expansion;
    sampling.first_index = a.first_index;

    auto cfg = ttc_config(a.case_path, a.tolerance, a.lambda_floor);
    cfg.lambda_cap = a.lambda_cap;
    cfg.coarse_step = a.coarse_step;

    auto ds = dataset::build_dataset(c, sampling, cfg, a.split, common.jobs);
    ds.manifest = manifest("sample", {{"case", a.case_path}, {"scenario", a.scenario_path}, {"case_hash", ds.case_hash}},
                           {{"samples", a.samples}, {"split", a.split}}, a.out, common);
    std::filesystem::path out(a.out);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    ds.save(out);
    std::printf("%zu requested, %zu kept (%zu train / %zu test), dropped: unbalanced %zu, power flow %zu, static %zu, "
                "no secure transfer %zu\n",
                ds.requested, ds.rows(), ds.n_train, ds.rows() - ds.n_train, ds.dropped.unbalanced, ds.dropped.power_flow,
                ds.dropped.static_limits, ds.dropped.no_secure_transfer);
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string dataset_path;
    std::vector<std::string> presets{"dl3"};
    std::string out;
    int max_iterations = 0;
    double gamma = -1.0;
};

int cmd_train(const TrainArgs& a, const Common& common) {
    if (!std::filesystem::exists(a.dataset_path)) throw InputError("dataset not found: " + a.dataset_path);
    const auto ds = dataset::TrainingDataset::load(a.dataset_path);
    const std::filesystem::path out(a.out);
    const bool many = a.presets.size() > 1;
    if (many || out.extension() != ".json") std::filesystem::create_directories(out);
    std::printf("%-6s %12s %12s %8s\n", "model", "train_mse", "test_mse", "seconds");
    for (const auto& name : a.presets) {
        auto cfg = surrogate::preset(name);
        cfg.seed = common.seed;
        if (a.max_iterations > 0) cfg.max_iterations = a.max_iterations;
        if (a.gamma >= 0.0) cfg.gamma = a.gamma;
        const auto t0 = std::chrono::steady_clock::now();
        auto m = surrogate::train(ds, cfg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double train = surrogate::mse(m, ds.train_features(), ds.train_targets());
        const double test = ds.rows() > ds.n_train ? surrogate::mse(m, ds.test_features(), ds.test_targets()) : 0.0;
        m.training["preset"] = name;
        m.training["train_mse"] = train;
        m.training["test_mse"] = test;
        m.training["seconds"] = secs;
        m.training["manifest"] = manifest("train", {{"dataset", a.dataset_path}, {"case_hash", ds.case_hash}},
                                          {{"preset", name}}, a.out, common);
        const auto path = (many || out.extension() != ".json") ? out / (name + ".json") : out;
        m.save(path);
        std::printf("%-6s %12.6f %12.6f %8.1f\n", name.c_str(), train, test, secs);
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct PlanArgs {
    std::string case_path;
    std::string scenario_path;
    std::string variant = "M0";
    std::string model_path;
    std::vector<double> static_limits_mw;
    double margin = -1.0;
    int first = 0;
    int last = 0;
    int horizon = 0;
    bool verify = false;
    double tolerance = 0.0025;
    double lambda_floor = -0.6;
    std::string out;
};

struct Loaded {
    grid::NetworkCase c;
    planner::Scenario s;
};

Loaded load_inputs(const PlanArgs& a) {
    Loaded in{read_case(a.case_path), {}};
    in.s = read_scenario(a.scenario_path, in.c);
    if (a.margin >= 0.0) in.s.margin = a.margin / grid::kBaseMva;
    if (a.first > 0) in.s.first_period = a.first;
    if (a.last > 0) in.s.last_period = a.last;
    if (a.horizon > 0) in.s.horizon = a.horizon;
    in.s.validate(in.c);
    return in;
}

nlohmann::json plan_inputs(const PlanArgs& a, const grid::NetworkCase& c) {
    return {{"case", a.case_path}, {"scenario", a.scenario_path}, {"model", a.model_path},
            {"case_hash", grid::case_hash(c)}};
}

int cmd_solve(const PlanArgs& a, const Common& common) {
    const auto variant = planner::Variant::parse(a.variant);
    auto [c, s] = load_inputs(a);
    planner::PlannerConfig cfg;
    cfg.variant = variant;
    cfg.margin = s.margin;
    cfg.model = read_model(a.model_path);
    cfg.trace_dir = common.trace;
    const auto ttc = ttc_config(a.case_path, a.tolerance, a.lambda_floor);
    if (variant.kind == planner::VariantKind::static_limit) {
        if (a.static_limits_mw.empty()) {
            cfg.static_limits = planner::static_limits(c, s, planner::initial_condition(c, s, cfg), ttc);
        } else {
            for (double v : a.static_limits_mw) cfg.static_limits.push_back(v / grid::kBaseMva);
        }
    }
    cfg.validate(c);
    const auto plan_out = std::filesystem::path(a.out);
    prepare_output(plan_out);
    auto plan = planner::run_mpc(c, s, cfg, [](const planner::StepLog& st) {
        std::printf("hour %3d  %-15s %4d it  %7.2f s  obj %.6f\n", st.hour, st.status.c_str(), st.iterations, st.seconds,
                    st.objective);
        std::fflush(stdout);
    });
    auto settings = nlohmann::json{{"variant", a.variant},
                                   {"margin_pu", s.margin},
                                   {"first_period", s.first_period},
                                   {"last_period", s.last_period},
                                   {"horizon", s.horizon},
                                   {"static_limits_pu", cfg.static_limits}};
    auto inputs = plan_inputs(a, c);
    if (cfg.model) inputs["model_case_hash"] = cfg.model->case_hash;
    plan.manifest = manifest("solve", inputs, settings, a.out, common);
    plan.save(plan_out);
    plan.write_csv(sibling(plan_out, ".csv"), c);
    std::printf("%s: %s, total cost %.2f $ over %zu periods\n", plan.variant.c_str(), plan.status.c_str(),
                plan.total_cost(), plan.periods.size());
    if (!plan.ok()) {
        std::fprintf(stderr, "failed: %s\n", plan.message.c_str());
        return kRunFailure;
    }
    if (a.verify) {
        const auto r = write_report(plan, c, s, ttc, cfg.model.get(), sibling(plan_out, ".report.json"), plan.manifest,
                                    common.jobs);
        if (!r.secure()) return kRunFailure;
    }
    return 0;
}

struct VerifyArgs : PlanArgs {
    std::string plan_path;
};

int cmd_verify(const VerifyArgs& a, const Common& common) {
    auto [c, s] = load_inputs(a);
    if (!std::filesystem::exists(a.plan_path)) throw InputError("plan not found: " + a.plan_path);
    const auto plan = planner::DispatchPlan::load(a.plan_path);
    const auto model = read_model(a.model_path);
    const auto out = a.out.empty() ? sibling(a.plan_path, ".report.json") : std::filesystem::path(a.out);
    auto inputs = plan_inputs(a, c);
    inputs["plan"] = a.plan_path;
    const auto r = write_report(plan, c, s, ttc_config(a.case_path, a.tolerance, a.lambda_floor), model.get(), out,
                                manifest("verify", inputs, {{"tolerance", a.tolerance}}, out.string(), common),
                                common.jobs);
    return r.secure() ? 0 : kRunFailure;
}

int cmd_ccm(const VerifyArgs& a, const Common& common) {
    auto [c, s] = load_inputs(a);
    if (!std::filesystem::exists(a.plan_path)) throw InputError("plan not found: " + a.plan_path);
    const auto baseline = planner::DispatchPlan::load(a.plan_path);
    planner::PlannerConfig cfg;
    cfg.margin = baseline.margin;
    cfg.trace_dir = common.trace;
    const auto ttc = ttc_config(a.case_path, a.tolerance, a.lambda_floor);
    auto res = planner::run_ccm(c, s, baseline, ttc, cfg, {}, [](const planner::StepLog& st) {
        std::printf("hour %3d  %-9s %2d cut rounds  cost %.2f $\n", st.hour, st.status.c_str(), st.iterations,
                    st.objective);
        std::fflush(stdout);
    });
    auto inputs = plan_inputs(a, c);
    inputs["baseline"] = a.plan_path;
    res.plan.manifest = manifest("ccm", inputs, {{"tolerance", a.tolerance}}, a.out, common);
    const std::filesystem::path out(a.out);
    prepare_output(out);
    res.plan.save(out);
    res.plan.write_csv(sibling(out, ".csv"), c);
    auto log = nlohmann::json::array();
    for (const auto& l : res.log) {
        log.push_back({{"hour", l.hour}, {"iterations", l.iterations}, {"secure", l.secure},
                       {"eta_before", l.eta_before}, {"eta_after", l.eta_after}, {"rounds", l.rounds}, {"solver", l.solver}});
    }
    std::ofstream(sibling(out, ".ccm.json")) << log.dump(1) << '\n';
    std::printf("CCM: total cost %.2f $ (baseline %.2f $), %s\n", res.plan.total_cost(), baseline.total_cost(),
                res.secure() ? "all periods secure" : "some periods insecure");
    return res.secure() ? 0 : kRunFailure;
}

struct CompareArgs {
    std::vector<std::string> plans;
    std::string out;
};

int cmd_compare(const CompareArgs& a) {
    if (a.plans.empty()) throw InputError("no plans given");
    std::vector<planner::DispatchPlan> plans;
    std::vector<std::optional<nlohmann::json>> reports;
    for (const auto& p : a.plans) {
        if (!std::filesystem::exists(p)) throw InputError("plan not found: " + p);
        plans.push_back(planner::DispatchPlan::load(p));
        const auto r = sibling(p, ".report.json");
        reports.push_back(std::filesystem::exists(r) ? std::optional(read_json(r.string())) : std::nullopt);
    }
    const double reference = plans.front().total_cost();
    std::ofstream out(a.out);
    if (!out) throw InputError("cannot write " + a.out);
    out.precision(10);
    out << "variant,plan,status,total_cost,periods,security_active_periods,ttc_violations,transient_failures,"
           "static_failures,secure,cost_ge_first\n";
    std::printf("%-8s %14s %7s %7s %6s %6s %6s\n", "variant", "cost $", "active", "ttc", "trans", "static", ">=1st");
    for (std::size_t k = 0; k < plans.size(); ++k) {
        const auto& p = plans[k];
        const auto active = std::count_if(p.periods.begin(), p.periods.end(), [](const auto& q) { return q.security_active; });
        const bool ge = p.total_cost() >= reference - 1e-6 * std::abs(reference);
        out << p.variant << ',' << a.plans[k] << ',' << p.status << ',' << p.total_cost() << ',' << p.periods.size()
            << ',' << active << ',';
        std::string ttc = "-", tr = "-", st = "-";
        if (reports[k]) {
            const auto& r = *reports[k];
            ttc = std::to_string(r.at("ttc_violations").get<int>());
            tr = std::to_string(r.at("transient_failures").get<int>());
            st = std::to_string(r.at("static_failures").get<int>());
            out << ttc << ',' << tr << ',' << st << ',' << r.at("secure").get<bool>();
        } else {
            out << ",,,";
        }
        out << ',' << ge << '\n';
        std::printf("%-8s %14.2f %7ld %7s %6s %6s %6s\n", p.variant.c_str(), p.total_cost(), static_cast<long>(active),
                    ttc.c_str(), tr.c_str(), st.c_str(), ge ? "yes" : "no");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transfer-capability-constrained operational planning with learned TTC surrogates"};
    app.set_config("--config", "", "TOML/INI file with option defaults");
    app.require_subcommand(1);
    Common common;
    app.add_option("--jobs", common.jobs, "Worker threads")->envname("TCOP_JOBS")->check(CLI::PositiveNumber);
    app.add_option("--trace", common.trace, "Write IPM iteration logs to this directory")->envname("TCOP_TRACE");
    app.add_option("--seed", common.seed, "Seed for weight initialization")->envname("TCOP_SEED");

    SampleArgs sample;
    auto* s = app.add_subcommand("sample", "Sample operating conditions and label them with TTC");
    s->add_option("--case", sample.case_path, "Case JSON")->required();
    s->add_option("--scenario", sample.scenario_path, "Scenario JSON whose loads set the sampling band");
    s->add_option("--n", sample.samples, "Number of samples")->check(CLI::PositiveNumber);
    s->add_option("--first-index", sample.first_index, "First Weyl index");
    s->add_option("--expansion", sample.expansion, "Load band expansion coefficient");
    s->add_option("--split", sample.split, "Training fraction");
    s->add_option("--lambda-cap", sample.lambda_cap, "Largest transfer increase searched");
    s->add_option("--lambda-floor", sample.lambda_floor, "Lowest transfer level tried when the base point is insecure");
    s->add_option("--tolerance", sample.tolerance, "Bisection tolerance on lambda");
    s->add_option("--coarse-step", sample.coarse_step, "Step of the bracketing march");
    s->add_option("--out", sample.out, "Output CSV (a JSON sidecar is written next to it)")->required();

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train surrogate models on a dataset");
    t->add_option("--dataset", train.dataset_path, "Dataset CSV")->required();
    t->add_option("--preset", train.presets, "Architecture presets: en slnn dl2 dl3 dl5")->delimiter(',');
    t->add_option("--out", train.out, "Model JSON, or a directory when several presets are given")->required();
    t->add_option("--max-iterations", train.max_iterations, "Optimizer iteration cap (default from the preset)");
    t->add_option("--gamma", train.gamma, "Data-term weight of the loss");

    auto plan_options = [](CLI::App* sub, PlanArgs& a) {
        sub->add_option("--case", a.case_path, "Case JSON")->required();
        sub->add_option("--scenario", a.scenario_path, "Scenario JSON")->required();
        sub->add_option("--margin", a.margin, "Security margin, MW (default from the scenario)");
        sub->add_option("--first", a.first, "First committed hour");
        sub->add_option("--last", a.last, "Last committed hour");
        sub->add_option("--horizon", a.horizon, "Look-ahead periods");
        sub->add_option("--tolerance", a.tolerance, "Bisection tolerance of the TTC search");
        sub->add_option("--lambda-floor", a.lambda_floor, "Lowest transfer level tried when the base point is insecure");
    };

    PlanArgs solve;
    auto* so = app.add_subcommand("solve", "Rolling-horizon dispatch with one model variant");
    plan_options(so, solve);
    so->add_option("--variant", solve.variant, "M0, M-S, M1, M2, M3-L or M4-L");
    so->add_option("--model", solve.model_path, "Surrogate model JSON");
    so->add_option("--static-limit", solve.static_limits_mw,
                   "M-S tie-line limits in MW (default: static TTC of the initial point)")
        ->delimiter(',');
    so->add_flag("--verify", solve.verify, "Verify the plan and write <out>.report.json");
    so->add_option("--out", solve.out, "Plan JSON (a CSV is written next to it)")->required();

    VerifyArgs verify;
    auto* ve = app.add_subcommand("verify", "True TTC and transient simulation of a plan");
    plan_options(ve, verify);
    ve->add_option("--plan", verify.plan_path, "Plan JSON")->required();
    ve->add_option("--model", verify.model_path, "Surrogate model JSON for the estimate columns");
    ve->add_option("--out", verify.out, "Report JSON (default <plan>.report.json)");

    VerifyArgs ccm;
    auto* cc = app.add_subcommand("ccm", "Corrective re-dispatch of an unconstrained plan");
    plan_options(cc, ccm);
    cc->add_option("--plan", ccm.plan_path, "Baseline plan JSON")->required();
    cc->add_option("--out", ccm.out, "Corrected plan JSON")->required();

    CompareArgs compare;
    auto* co = app.add_subcommand("compare", "Join plan costs and verification verdicts into one table");
    co->add_option("plans", compare.plans, "Plan JSON files; the first is the cost reference")->required();
    co->add_option("--out", compare.out, "Comparison CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kInputError;
    }

    try {
        if (*s) return cmd_sample(sample, common);
        if (*t) return cmd_train(train, common);
        if (*so) return cmd_solve(solve, common);
        if (*ve) return cmd_verify(verify, common);
        if (*cc) return cmd_ccm(ccm, common);
        if (*co) return cmd_compare(compare);
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kInputError;
    } catch (const grid::InvalidCase& e) {
        std::fprintf(stderr, "error: invalid case: %s\n", e.what());
        return kInputError;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kInputError;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: malformed input: %s\n", e.what());
        return kInputError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "failed: %s\n", e.what());
        return kRunFailure;
    }
    return 0;
}
