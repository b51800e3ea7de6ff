#include <chrono>
#include <cmath>
#include <fstream>

#include "tcop/planner/planner.hpp"

namespace tcop::planner {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kMw = grid::kBaseMva;

std::vector<PeriodForecast> forecasts(const Scenario& s, std::size_t first, int horizon) {
    if (horizon < 1) throw std::invalid_argument("horizon must be at least one period");
    if (first + static_cast<std::size_t>(horizon) > s.periods()) {
        throw std::invalid_argument("scenario does not cover periods " + std::to_string(first + 1) + ".." +
                                    std::to_string(first + static_cast<std::size_t>(horizon)));
    }
    std::vector<PeriodForecast> out;
    for (int t = 0; t < horizon; ++t) out.push_back(PeriodForecast::of(s, first + static_cast<std::size_t>(t)));
    return out;
}

}  // namespace

grid::OperatingPoint PeriodPlan::point() const {
    grid::OperatingPoint p;
    p.vm = vm;
    p.va = va;
    p.pg = pg;
    p.qg = qg;
    p.pw = pw;
    p.pe = pe;
    p.ee = ee;
    return p;
}

nlohmann::json PeriodPlan::to_json() const {
    return {{"hour", hour},         {"pg", pg},           {"qg", qg},
            {"pw", pw},             {"curtail", curtail}, {"pe", pe},
            {"ee", ee},             {"vm", vm},           {"va", va},
            {"tie_flow", tie_flow}, {"gamma_hat", gamma_hat}, {"margin_hat", margin_hat},
            {"cost", cost},         {"security_active", security_active}};
}

PeriodPlan PeriodPlan::from_json(const nlohmann::json& j) {
    PeriodPlan p;
    p.hour = j.at("hour").get<int>();
    for (auto [key, field] : {std::pair{"pg", &p.pg}, {"qg", &p.qg}, {"pw", &p.pw}, {"curtail", &p.curtail},
                              {"pe", &p.pe}, {"ee", &p.ee}, {"vm", &p.vm}, {"va", &p.va}, {"tie_flow", &p.tie_flow},
                              {"gamma_hat", &p.gamma_hat}, {"margin_hat", &p.margin_hat}}) {
        *field = j.at(key).get<std::vector<double>>();
    }
    p.cost = j.at("cost").get<double>();
    p.security_active = j.value("security_active", false);
    return p;
}

double DispatchPlan::total_cost() const {
    double total = 0.0;
    for (const auto& p : periods) total += p.cost;
    return total;
}

nlohmann::json DispatchPlan::to_json() const {
    auto ps = nlohmann::json::array();
    for (const auto& p : periods) ps.push_back(p.to_json());
    auto st = nlohmann::json::array();
    for (const auto& s : steps) {
        st.push_back({{"hour", s.hour}, {"status", s.status}, {"iterations", s.iterations}, {"seconds", s.seconds},
                      {"objective", s.objective}});
    }
    return {{"variant", variant}, {"status", status},   {"message", message},     {"margin_pu", margin},
            {"tie_lines", tie_lines}, {"total_cost", total_cost()}, {"periods", ps}, {"steps", st},
            {"manifest", manifest}, {"units", "p.u. on 100 MVA; energy p.u.*h; cost $"}};
}

DispatchPlan DispatchPlan::from_json(const nlohmann::json& j) {
    DispatchPlan d;
    d.variant = j.at("variant").get<std::string>();
    d.status = j.value("status", "ok");
    d.message = j.value("message", "");
    d.margin = j.value("margin_pu", 0.05);
    d.tie_lines = j.at("tie_lines").get<std::vector<std::string>>();
    for (const auto& p : j.at("periods")) d.periods.push_back(PeriodPlan::from_json(p));
    for (const auto& s : j.value("steps", nlohmann::json::array())) {
        d.steps.push_back({s.at("hour").get<int>(), s.at("status").get<std::string>(), s.at("iterations").get<int>(),
                           s.at("seconds").get<double>(), s.at("objective").get<double>()});
    }
    d.manifest = j.value("manifest", nlohmann::json::object());
    return d;
}

void DispatchPlan::save(const std::filesystem::path& json_path) const {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write " + json_path.string());
    out << to_json().dump(1) << '\n';
}

DispatchPlan DispatchPlan::load(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("cannot read plan " + json_path.string());
    return from_json(nlohmann::json::parse(in));
}

void DispatchPlan::write_csv(const std::filesystem::path& path, const grid::NetworkCase& c) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "hour,cost";
    for (const auto& g : c.generators) out << ",P_MW:" << g.id;
    for (const auto& g : c.generators) out << ",Q_MVAr:" << g.id;
    for (const auto& w : c.wind_farms) out << ",wind_MW:" << w.id << ",curtail_MW:" << w.id;
    for (const auto& e : c.storage) out << ",ess_MW:" << e.id << ",ess_MWh:" << e.id;
    for (const auto& t : tie_lines) out << ",flow_MW:" << t << ",gamma_hat_MW:" << t << ",margin_hat_MW:" << t;
    out << '\n';
    for (const auto& p : periods) {
        out << p.hour << ',' << p.cost;
        for (double v : p.pg) out << ',' << v * kMw;
        for (double v : p.qg) out << ',' << v * kMw;
        for (std::size_t w = 0; w < p.pw.size(); ++w) out << ',' << p.pw[w] * kMw << ',' << p.curtail[w] * kMw;
        for (std::size_t e = 0; e < p.pe.size(); ++e) out << ',' << p.pe[e] * kMw << ',' << p.ee[e] * kMw;
        for (std::size_t k = 0; k < tie_lines.size(); ++k) {
            out << ',' << p.tie_flow[k] * kMw;
            if (k < p.gamma_hat.size()) out << ',' << p.gamma_hat[k] * kMw << ',' << p.margin_hat[k] * kMw;
            else out << ",,";
        }
        out << '\n';
    }
}

PeriodPlan decode_period(const PlanningProblem& p, const VectorXd& x, int t, int hour) {
    const auto& c = p.network();
    const auto& l = p.layout();
    const VectorXd xp = p.period(x, t);
    PeriodPlan out;
    out.hour = hour;
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        out.pg.push_back(xp[l.pg(g)]);
        out.qg.push_back(xp[l.qg(g)]);
    }
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) {
        out.curtail.push_back(xp[l.curtail(w)]);
        out.pw.push_back(p.forecast(t).wind[w] - xp[l.curtail(w)]);
    }
    for (std::size_t e = 0; e < c.storage.size(); ++e) {
        out.pe.push_back(xp[l.pe(e)]);
        out.ee.push_back(xp[l.ee(e)]);
    }
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        out.vm.push_back(xp[l.vm(i)]);
        out.va.push_back(xp[l.va(i)]);
    }
    const auto* s = p.surrogate(t);
    for (std::size_t k = 0; k < c.tie_lines.size(); ++k) {
        const auto e = tie_end(c, c.tie_lines[k]);
        out.tie_flow.push_back(grid::active_flow(e, xp[l.vm(e.sending)], xp[l.vm(e.receiving)], xp[l.va(e.sending)],
                                                 xp[l.va(e.receiving)])
                                   .value);
        if (s) {
            const auto m = surrogate_margin(c, l, *s, xp, k, false);
            out.gamma_hat.push_back(m.gamma);
            out.margin_hat.push_back(m.value);
        }
    }
    out.cost = p.period_cost(x, t);
    const Index row = p.security_row(t);
    if (row >= 0) {
        const VectorXd g = p.inequality(x);
        const VectorXd up = p.g_upper();
        for (std::size_t k = 0; k < c.tie_lines.size(); ++k) {
            const auto r = row + static_cast<Index>(k);
            if (g[r] > up[r] - 1e-4) out.security_active = true;
        }
    }
    return out;
}

SolveOutcome solve_horizon(const grid::NetworkCase& c, const Scenario& s, std::size_t first_period, int horizon,
                           const InitialCondition& init, const PlannerConfig& config, const std::vector<LinearCut>& cuts,
                           const VectorXd* warm) {
    PlanningProblem p(c, forecasts(s, first_period, horizon), init, config, cuts, s.period_hours);
    const VectorXd x0 = warm && warm->size() == p.variables() ? *warm : p.initial_guess();
    std::vector<double> sigmas{config.ipm.sigma};
    sigmas.insert(sigmas.end(), config.retry_sigma.begin(), config.retry_sigma.end());
    SolveOutcome out;
    for (double sigma : sigmas) {
        auto options = config.ipm;
        options.sigma = sigma;
        if (!config.trace_dir.empty()) {
            std::filesystem::create_directories(config.trace_dir);
            auto name = "ipm_" + config.variant.tag + "_h" + std::to_string(first_period + 1);
            if (out.attempts > 0) name += "_retry" + std::to_string(out.attempts);
            options.trace_path = (std::filesystem::path(config.trace_dir) / (name + ".csv")).string();
        }
        out.result = ipm::solve(p, x0, options);
        ++out.attempts;
        if (out.result.status != ipm::Status::max_iterations) break;
    }
    out.x = out.result.x;
    return out;
}

InitialCondition initial_condition(const grid::NetworkCase& c, const Scenario& s, const PlannerConfig& config) {
    if (s.first_period < 2) throw std::invalid_argument("the committed interval must leave one hour before it");
    const auto period = static_cast<std::size_t>(s.first_period - 2);
    PlannerConfig base = config;
    base.variant = Variant::parse("M0");
    base.model.reset();
    base.static_limits.clear();
    base.trace_dir.clear();
    InitialCondition init;
    PlanningProblem p(c, forecasts(s, period, 1), init, base, {}, s.period_hours);
    const auto res = ipm::solve(p, p.initial_guess(), base.ipm);
    if (!res.ok()) {
        throw std::runtime_error("initial dispatch failed: " + ipm::to_string(res.status) + " " + res.message);
    }
    const auto plan = decode_period(p, res.x, 0, static_cast<int>(period) + 1);
    init.pg = plan.pg;
    init.energy = plan.ee;
    init.guess = plan.point();
    return init;
}

DispatchPlan run_mpc(const grid::NetworkCase& c, const Scenario& s, const PlannerConfig& config, const Progress& progress) {
    s.validate(c);
    config.validate(c);
    DispatchPlan plan;
    plan.variant = config.variant.tag;
    plan.margin = config.margin;
    for (const auto& t : c.tie_lines) plan.tie_lines.push_back(t.line_id);

    auto init = initial_condition(c, s, config);
    VectorXd warm;
    for (int hour = s.first_period; hour <= s.last_period; ++hour) {
        const auto period = static_cast<std::size_t>(hour - 1);
        const auto t0 = std::chrono::steady_clock::now();
        const auto out = solve_horizon(c, s, period, s.horizon, init, config, {}, warm.size() ? &warm : nullptr);
        StepLog step{hour, ipm::to_string(out.result.status), out.result.iterations,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), out.result.objective};
        plan.steps.push_back(step);
        if (progress) progress(step);
        if (!out.result.ok()) {
            plan.status = "partial";
            plan.message = "hour " + std::to_string(hour) + ": " + step.status + " " + out.result.message;
            break;
        }
        PlanningProblem p(c, forecasts(s, period, s.horizon), init, config, {}, s.period_hours);
        auto committed = decode_period(p, out.x, 0, hour);
        for (std::size_t e = 0; e < c.storage.size(); ++e) {
            committed.ee[e] = init.energy[e] - s.period_hours * committed.pe[e];
        }
        plan.periods.push_back(committed);
        init.pg = committed.pg;
        init.energy = committed.ee;
        init.guess = committed.point();

        // Shift the solution one period for the next warm start.
        const Index n = p.layout().size();
        warm = out.x;
        for (int t = 0; t + 1 < p.horizon(); ++t) warm.segment(n * t, n) = out.x.segment(n * (t + 1), n);
    }
    return plan;
}

}  // namespace tcop::planner
