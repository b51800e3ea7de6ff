#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "tcop/planner/planner.hpp"

namespace tcop::planner {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kDeg = 180.0 / 3.14159265358979323846;

std::optional<grid::OperatingPoint> solve_flow(const grid::NetworkCase& c, const grid::OperatingPoint& setpoints,
                                               const grid::PowerFlowOptions& options) {
    try {
        return grid::solve_power_flow(c, setpoints, options).point;
    } catch (const grid::PowerFlowDiverged&) {
        return std::nullopt;
    } catch (const grid::SingularJacobian&) {
        return std::nullopt;
    }
}

std::vector<double> tie_flows(const grid::NetworkCase& c, const grid::OperatingPoint& p) {
    std::vector<double> out;
    for (const auto& t : c.tie_lines) out.push_back(grid::line_flow(c, p, t.line_id, t.sending_bus));
    return out;
}

// flow - TTC per tie-line; NaN when no transfer level down to the floor is secure.
std::vector<double> true_margins(const grid::NetworkCase& c, const grid::OperatingPoint& solved,
                                 const ttc::TtcSearchConfig& config) {
    const auto flow = tie_flows(c, solved);
    std::vector<double> eta(flow.size(), kNan);
    try {
        const auto r = ttc::compute_ttc(c, solved, config);
        for (std::size_t k = 0; k < flow.size(); ++k) eta[k] = flow[k] - r.gamma[k];
    } catch (const ttc::BaseInfeasible&) {
    }
    return eta;
}

bool meets_margin(const std::vector<double>& eta, double margin) {
    return std::all_of(eta.begin(), eta.end(), [&](double e) { return e <= -margin + 1e-9; });
}

PeriodSecurity verify_period(const PeriodPlan& p, const grid::NetworkCase& c, const Scenario& s,
                             const ttc::TtcSearchConfig& config, const surrogate::SurrogateModel* model, double margin) {
    PeriodSecurity out;
    out.hour = p.hour;
    const auto pc = period_case(c, s, p);
    const auto solved = solve_flow(pc, p.point(), config.power_flow);
    if (!solved) {
        out.transient_stable = false;
        out.ttc_violated = true;
        out.margin_met = false;
        out.static_violation = "power_flow";
        return out;
    }
    out.power_flow = true;
    out.static_violation = ttc::static_violation(pc, *solved, config.checks);
    out.flow = tie_flows(pc, *solved);
    try {
        const auto r = ttc::compute_ttc(pc, *solved, config);
        out.lambda = r.lambda;
        out.gamma = r.gamma;
    } catch (const ttc::BaseInfeasible&) {
        out.lambda = kNan;
        out.gamma.assign(out.flow.size(), kNan);
    }
    for (std::size_t k = 0; k < out.flow.size(); ++k) {
        const double eta = std::isnan(out.gamma[k]) ? kNan : out.flow[k] - out.gamma[k];
        out.eta.push_back(eta);
        if (!(eta <= 0.0)) out.ttc_violated = true;
        if (!(eta <= -margin + 1e-9)) out.margin_met = false;
    }

    auto sim = config.simulation;
    for (const auto& k : config.contingencies) {
        ContingencyVerdict v;
        v.id = k.id;
        try {
            const auto verdict = dynamics::check_stability(dynamics::simulate(pc, *solved, k, sim), config.criterion);
            v.stable = verdict.stable;
            v.max_angle_deg = verdict.worst_excursion * kDeg;
        } catch (const dynamics::SimulationCollapse&) {
            v.stable = false;
            v.max_angle_deg = kNan;
        }
        if (!v.stable) out.transient_stable = false;
        out.contingencies.push_back(v);
    }
    if (model) {
        const VectorXd g = model->predict(dataset::extract_features(*solved, pc));
        out.gamma_hat.assign(g.data(), g.data() + g.size());
    }
    return out;
}

nlohmann::json nullable(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json nullable(const std::vector<double>& v) {
    auto out = nlohmann::json::array();
    for (double x : v) out.push_back(nullable(x));
    return out;
}

}  // namespace

grid::NetworkCase period_case(const grid::NetworkCase& c, const Scenario& s, const PeriodPlan& p) {
    if (p.hour < 1) throw std::invalid_argument("plan hours start at 1");
    auto out = s.at(c, static_cast<std::size_t>(p.hour - 1));
    if (p.pg.size() != c.generators.size() || p.pw.size() != c.wind_farms.size() || p.pe.size() != c.storage.size() ||
        p.vm.size() != c.buses.size()) {
        throw std::invalid_argument("plan period does not match the case");
    }
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        out.generators[g].p = p.pg[g];
        out.generators[g].vg = p.vm[c.bus_index(c.generators[g].bus)];
    }
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) out.wind_farms[w].p = p.pw[w];
    for (std::size_t e = 0; e < c.storage.size(); ++e) out.storage[e].p = p.pe[e];
    return out;
}

nlohmann::json PeriodSecurity::to_json() const {
    auto ks = nlohmann::json::array();
    for (const auto& k : contingencies) {
        ks.push_back({{"id", k.id}, {"stable", k.stable}, {"max_angle_deg", nullable(k.max_angle_deg)}});
    }
    return {{"hour", hour},
            {"power_flow", power_flow},
            {"static_violation", static_violation},
            {"lambda", nullable(lambda)},
            {"flow", flow},
            {"gamma", nullable(gamma)},
            {"eta", nullable(eta)},
            {"gamma_hat", gamma_hat},
            {"contingencies", ks},
            {"transient_stable", transient_stable},
            {"ttc_violated", ttc_violated},
            {"margin_met", margin_met}};
}

int SecurityReport::ttc_violations() const {
    return static_cast<int>(std::count_if(periods.begin(), periods.end(), [](const auto& p) { return p.ttc_violated; }));
}

int SecurityReport::transient_failures() const {
    return static_cast<int>(
        std::count_if(periods.begin(), periods.end(), [](const auto& p) { return !p.transient_stable; }));
}

int SecurityReport::static_failures() const {
    return static_cast<int>(
        std::count_if(periods.begin(), periods.end(), [](const auto& p) { return !p.static_violation.empty(); }));
}

nlohmann::json SecurityReport::to_json() const {
    auto ps = nlohmann::json::array();
    for (const auto& p : periods) ps.push_back(p.to_json());
    return {{"variant", variant},
            {"margin_pu", margin},
            {"tie_lines", tie_lines},
            {"ttc_violations", ttc_violations()},
            {"transient_failures", transient_failures()},
            {"static_failures", static_failures()},
            {"secure", secure()},
            {"periods", ps}};
}

void SecurityReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "hour,power_flow,static_violation,lambda,transient_stable,ttc_violated,margin_met";
    for (const auto& t : tie_lines) out << ",flow_MW:" << t << ",ttc_MW:" << t << ",eta_MW:" << t;
    if (!periods.empty()) {
        for (const auto& k : periods.front().contingencies) out << ",stable:" << k.id << ",max_angle_deg:" << k.id;
    }
    out << '\n';
    auto mw = [&](const std::vector<double>& v, std::size_t k) {
        if (k < v.size() && std::isfinite(v[k])) out << v[k] * grid::kBaseMva;
    };
    for (const auto& p : periods) {
        out << p.hour << ',' << p.power_flow << ',' << p.static_violation << ',';
        if (std::isfinite(p.lambda)) out << p.lambda;
        out << ',' << p.transient_stable << ',' << p.ttc_violated << ',' << p.margin_met;
        for (std::size_t k = 0; k < tie_lines.size(); ++k) {
            out << ',';
            mw(p.flow, k);
            out << ',';
            mw(p.gamma, k);
            out << ',';
            mw(p.eta, k);
        }
        for (const auto& k : p.contingencies) {
            out << ',' << k.stable << ',';
            if (std::isfinite(k.max_angle_deg)) out << k.max_angle_deg;
        }
        out << '\n';
    }
}

SecurityReport verify_plan(const DispatchPlan& plan, const grid::NetworkCase& c, const Scenario& s,
                           const ttc::TtcSearchConfig& ttc_config, const surrogate::SurrogateModel* model, int jobs) {
    ttc_config.validate();
    SecurityReport report;
    report.variant = plan.variant;
    report.margin = plan.margin;
    report.tie_lines = plan.tie_lines;
    report.periods.resize(plan.periods.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < plan.periods.size(); k = next++) {
            report.periods[k] = verify_period(plan.periods[k], c, s, ttc_config, model, plan.margin);
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
    }
    return report;
}

std::vector<double> static_limits(const grid::NetworkCase& c, const Scenario& s, const InitialCondition& init,
                                  const ttc::TtcSearchConfig& ttc_config) {
    if (!init.guess) throw std::invalid_argument("static limits need the initial operating point");
    auto config = ttc_config;
    config.contingencies.clear();
    PeriodPlan p;
    p.hour = s.first_period - 1;
    const auto& g = *init.guess;
    p.pg = g.pg;
    p.pw = g.pw;
    p.pe = g.pe;
    p.vm = g.vm;
    const auto pc = period_case(c, s, p);
    const auto solved = solve_flow(pc, g, config.power_flow);
    if (!solved) throw std::runtime_error("power flow of the initial point failed");
    return ttc::compute_ttc(pc, *solved, config).gamma;
}

bool CcmResult::secure() const {
    return std::all_of(log.begin(), log.end(), [](const auto& l) { return l.secure; });
}

CcmResult run_ccm(const grid::NetworkCase& c, const Scenario& s, const DispatchPlan& baseline,
                  const ttc::TtcSearchConfig& ttc_config, const PlannerConfig& config, const CcmConfig& ccm,
                  const Progress& progress) {
    if (!(ccm.perturbation > 0.0) || ccm.max_iterations < 0 || !(ccm.ttc_tolerance > 0.0) ||
        !(ccm.flow_step > 0.0) || !(ccm.overshoot >= 0.0)) {
        throw std::invalid_argument("invalid corrective settings");
    }
    PlannerConfig base = config;
    base.variant = Variant::parse("M0");
    base.model.reset();
    base.static_limits.clear();
    base.validate(c);
    auto fine = ttc_config;
    fine.tolerance = std::min(ttc_config.tolerance, ccm.ttc_tolerance);
    fine.coarse_step = std::max(fine.coarse_step, fine.tolerance);
    fine.validate();

    const auto layout = PeriodLayout::of(c);
    const auto names = layout.names(c);
    CcmResult out;
    out.plan = baseline;
    out.plan.variant = "CCM";
    out.plan.steps.clear();
    out.plan.manifest["baseline"] = baseline.variant;

    // Controls whose sensitivities enter the cuts: non-slack generator output and curtailment.
    std::vector<Index> controls;
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        if (c.buses[c.bus_index(c.generators[g].bus)].type != grid::BusType::slack) controls.push_back(layout.pg(g));
    }
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) controls.push_back(layout.curtail(w));

    auto init = initial_condition(c, s, base);
    for (std::size_t i = 0; i < baseline.periods.size(); ++i) {
        PeriodPlan current = baseline.periods[i];
        const auto period = static_cast<std::size_t>(current.hour - 1);
        const auto forecast = PeriodForecast::of(s, period);
        CcmPeriodLog log;
        log.hour = current.hour;

        bool ramp_ok = true;
        for (std::size_t g = 0; g < c.generators.size() && !init.pg.empty(); ++g) {
            const double d = current.pg[g] - init.pg[g];
            if (d > c.generators[g].ramp_up * s.period_hours + 1e-6 ||
                -d > c.generators[g].ramp_down * s.period_hours + 1e-6) {
                ramp_ok = false;
            }
        }

        auto evaluate = [&](const PeriodPlan& p, bool margins) {
            const auto pc = period_case(c, s, p);
            const auto solved = solve_flow(pc, p.point(), fine.power_flow);
            if (!solved) return std::vector<double>(c.tie_lines.size(), kNan);
            return margins ? true_margins(pc, *solved, fine) : tie_flows(pc, *solved);
        };
        auto eta = evaluate(current, true);
        log.eta_before = eta;

        // Storage stays on the baseline schedule; only generation and curtailment are corrected.
        std::vector<LinearCut> cuts;
        for (std::size_t e = 0; e < c.storage.size(); ++e) {
            LinearCut cut;
            cut.coef = VectorXd::Zero(layout.size());
            cut.coef[layout.ee(e)] = 1.0;
            cut.lower = current.ee[e] - 1e-5;
            cut.upper = current.ee[e] + 1e-5;
            cut.label = "pin:" + names[static_cast<std::size_t>(layout.ee(e))];
            cuts.push_back(cut);
        }

        bool failed = false;
        while ((!meets_margin(eta, baseline.margin) || !ramp_ok) && log.iterations < ccm.max_iterations) {
            if (!meets_margin(eta, baseline.margin)) {
                // Without a defined TTC the cuts push the tie flows themselves down by a fixed step.
                const bool defined = std::none_of(eta.begin(), eta.end(), [](double e) { return std::isnan(e); });
                const auto centre = defined ? eta : evaluate(current, false);
                VectorXd xk = VectorXd::Zero(layout.size());
                for (std::size_t g = 0; g < c.generators.size(); ++g) xk[layout.pg(g)] = current.pg[g];
                for (std::size_t w = 0; w < c.wind_farms.size(); ++w) xk[layout.curtail(w)] = current.curtail[w];
                std::vector<VectorXd> sens(c.tie_lines.size(), VectorXd::Zero(layout.size()));
                for (Index v : controls) {
                    std::array<std::vector<double>, 2> side;
                    for (int sign : {0, 1}) {
                        PeriodPlan q = current;
                        const double h = sign ? ccm.perturbation : -ccm.perturbation;
                        bool done = false;
                        for (std::size_t g = 0; g < c.generators.size() && !done; ++g) {
                            if (layout.pg(g) == v) {
                                q.pg[g] += h;
                                done = true;
                            }
                        }
                        for (std::size_t w = 0; w < c.wind_farms.size() && !done; ++w) {
                            if (layout.curtail(w) == v) {
                                q.curtail[w] += h;
                                q.pw[w] -= h;
                                done = true;
                            }
                        }
                        side[static_cast<std::size_t>(sign)] = evaluate(q, defined);
                    }
                    const double h = ccm.perturbation;
                    for (std::size_t k = 0; k < c.tie_lines.size(); ++k) {
                        const double lo = side[0][k], hi = side[1][k];
                        if (!std::isnan(lo) && !std::isnan(hi)) {
                            sens[k][v] = (hi - lo) / (2.0 * h);
                        } else if (!std::isnan(hi)) {
                            sens[k][v] = (hi - centre[k]) / h;
                        } else if (!std::isnan(lo)) {
                            sens[k][v] = (centre[k] - lo) / h;
                        }
                    }
                }
                for (std::size_t k = 0; k < c.tie_lines.size(); ++k) {
                    if (defined && eta[k] <= -baseline.margin) continue;
                    LinearCut cut;
                    cut.coef = sens[k];
                    cut.upper = (defined ? -baseline.margin - ccm.overshoot - eta[k] : -ccm.flow_step) + sens[k].dot(xk);
                    cut.label = "cut:" + c.tie_lines[k].line_id + ":" + std::to_string(log.iterations);
                    cuts.push_back(cut);
                }
            }
            const auto solved = solve_horizon(c, s, period, 1, init, base, cuts);
            ++log.iterations;
            log.solver = ipm::to_string(solved.result.status);
            if (!solved.result.ok()) {
                failed = true;
                break;
            }
            PlanningProblem p(c, {forecast}, init, base, cuts, s.period_hours);
            current = decode_period(p, solved.x, 0, current.hour);
            for (std::size_t e = 0; e < c.storage.size(); ++e) {
                current.ee[e] = init.energy[e] - s.period_hours * current.pe[e];
            }
            ramp_ok = true;
            eta = evaluate(current, true);
            log.rounds.push_back(eta);
        }
        log.eta_after = eta;
        log.secure = !failed && meets_margin(eta, baseline.margin);
        out.plan.periods[i] = current;
        out.log.push_back(log);
        if (progress) progress({current.hour, log.secure ? "secure" : "insecure", log.iterations, 0.0, current.cost});
        init.pg = current.pg;
        init.energy = current.ee;
        init.guess = current.point();
    }
    if (!out.secure()) {
        out.plan.status = "partial";
        out.plan.message = "some periods could not be made secure";
    }
    return out;
}

}  // namespace tcop::planner
