#include "tcop/ttc/ttc.hpp"

#include <algorithm>
#include <cmath>
#include <future>

namespace tcop::ttc {

void TtcSearchConfig::validate() const {
    if (!(lambda_cap > 0.0)) throw std::invalid_argument("lambda cap must be positive");
    if (!(tolerance > 0.0)) throw std::invalid_argument("bisection tolerance must be positive");
    if (!(coarse_step >= tolerance)) throw std::invalid_argument("coarse step must be at least the tolerance");
    if (lambda_floor > 0.0) throw std::invalid_argument("lambda floor must not be positive");
    if (jobs < 1) throw std::invalid_argument("jobs must be at least 1");
    simulation.validate();
}

double TtcResult::total() const {
    double s = 0.0;
    for (double g : gamma) s += g;
    return s;
}

BaseInfeasible::BaseInfeasible(const std::string& tag_)
    : std::runtime_error("operating point is infeasible before any transfer increase (" + tag_ + ")"), tag(tag_) {}

ScaledSystem scale_transfer(const grid::NetworkCase& c, const grid::OperatingPoint& point, double lambda) {
    ScaledSystem out{c, point};
    double increment = 0.0;
    for (auto& b : out.c.buses) {
        if (b.area != grid::Area::sink) continue;
        increment += lambda * b.pd;
        b.pd *= 1.0 + lambda;
        b.qd *= 1.0 + lambda;
    }
    if (lambda == 0.0) return out;

    const auto slack_bus = c.buses[c.slack_index()].id;
    std::vector<std::size_t> movers;
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        const auto& gen = c.generators[g];
        if (gen.bus != slack_bus && c.buses[c.bus_index(gen.bus)].area == grid::Area::source) movers.push_back(g);
    }
    if (movers.empty()) throw CapacityExhausted("no source-area generator can follow the transfer");

    // Share by rated capacity; units that hit a limit are pinned and the rest re-shared.
    double left = increment;
    std::vector<bool> pinned(c.generators.size(), false);
    while (std::abs(left) > 1e-12) {
        double rated = 0.0;
        for (auto g : movers) {
            if (!pinned[g]) rated += c.generators[g].p_max;
        }
        if (rated <= 0.0) throw CapacityExhausted("source-area generation exhausted");
        double placed = 0.0;
        bool clipped = false;
        for (auto g : movers) {
            if (pinned[g]) continue;
            const auto& gen = c.generators[g];
            const double want = out.point.pg[g] + left * gen.p_max / rated;
            const double got = std::clamp(want, gen.p_min, gen.p_max);
            if (got != want) {
                pinned[g] = true;
                clipped = true;
            }
            placed += got - out.point.pg[g];
            out.point.pg[g] = got;
        }
        left -= placed;
        if (!clipped && std::abs(left) > 1e-9) break;
    }
    for (auto g : movers) out.c.generators[g].p = out.point.pg[g];
    return out;
}

std::string static_violation(const grid::NetworkCase& c, const grid::OperatingPoint& p, const StaticChecks& checks,
                             double tol) {
    if (checks.voltage) {
        for (std::size_t i = 0; i < c.buses.size(); ++i) {
            if (p.vm[i] < c.buses[i].v_min - tol || p.vm[i] > c.buses[i].v_max + tol) return "voltage";
        }
    }
    if (checks.thermal) {
        for (std::size_t l = 0; l < c.lines.size(); ++l) {
            const double f = p.line_p[l];
            if (f > c.lines[l].p_max + tol || f < c.lines[l].p_min - tol) return "thermal";
        }
    }
    if (checks.reactive) {
        for (std::size_t g = 0; g < c.generators.size(); ++g) {
            if (p.qg[g] < c.generators[g].q_min - tol || p.qg[g] > c.generators[g].q_max + tol) return "q_limit";
        }
    }
    const auto s = c.slack_index();
    if (auto g = c.generator_at(c.buses[s].id)) {
        const auto& gen = c.generators[*g];
        if (p.pg[*g] > gen.p_max + tol || p.pg[*g] < gen.p_min - tol) return "capacity";
    }
    return {};
}

Assessment assess_feasible(const grid::NetworkCase& c, const grid::OperatingPoint& setpoints,
                           const TtcSearchConfig& config) {
    Assessment out;
    grid::OperatingPoint solved;
    try {
        solved = grid::solve_power_flow(c, setpoints, config.power_flow).point;
    } catch (const grid::PowerFlowDiverged&) {
        out.tag = "power_flow";
        return out;
    } catch (const grid::SingularJacobian&) {
        out.tag = "power_flow";
        return out;
    }
    out.point = solved;
    if (auto tag = static_violation(c, solved, config.checks); !tag.empty()) {
        out.tag = tag;
        return out;
    }

    auto sim = config.simulation;
    sim.stop_excursion = config.criterion.delta_max;
    auto stable = [&](const dynamics::ContingencySpec& k) {
        try {
            return dynamics::check_stability(dynamics::simulate(c, solved, k, sim), config.criterion).stable;
        } catch (const dynamics::SimulationCollapse&) {
            return false;
        }
    };
    const auto& ks = config.contingencies;
    if (config.jobs > 1 && ks.size() > 1) {
        std::vector<std::future<bool>> futures;
        for (const auto& k : ks) futures.push_back(std::async(std::launch::async, stable, std::cref(k)));
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (!futures[i].get() && out.tag.empty()) out.tag = "transient:" + ks[i].id;
        }
        if (!out.tag.empty()) return out;
    } else {
        for (const auto& k : ks) {
            if (!stable(k)) {
                out.tag = "transient:" + k.id;
                return out;
            }
        }
    }
    out.feasible = true;
    return out;
}

namespace {

Assessment assess_at(const grid::NetworkCase& c, const grid::OperatingPoint& point, double lambda,
                     const TtcSearchConfig& config, int& evaluations) {
    ++evaluations;
    try {
        auto scaled = scale_transfer(c, point, lambda);
        return assess_feasible(scaled.c, scaled.point, config);
    } catch (const CapacityExhausted&) {
        return {false, "capacity", std::nullopt};
    }
}

}  // namespace

TtcResult compute_ttc(const grid::NetworkCase& c, const grid::OperatingPoint& point, const TtcSearchConfig& config) {
    config.validate();
    TtcResult out;
    for (const auto& t : c.tie_lines) out.tie_lines.push_back(t.line_id);

    double lo = 0.0;
    Assessment lo_state = assess_at(c, point, 0.0, config, out.evaluations);
    double hi = 0.0;
    std::string hi_tag;
    if (!lo_state.feasible) {
        if (config.lambda_floor >= 0.0) throw BaseInfeasible(lo_state.tag);
        hi = 0.0;
        hi_tag = lo_state.tag;
        bool found = false;
        for (int k = 1; -k * config.coarse_step >= config.lambda_floor - 1e-12; ++k) {
            const double lam = -k * config.coarse_step;
            auto a = assess_at(c, point, lam, config, out.evaluations);
            if (a.feasible) {
                lo = lam;
                lo_state = std::move(a);
                found = true;
                break;
            }
            hi = lam;
            hi_tag = a.tag;
        }
        if (!found) throw BaseInfeasible(lo_state.tag);
    } else {
        bool bracketed = false;
        for (int k = 1;; ++k) {
            const double lam = std::min(k * config.coarse_step, config.lambda_cap);
            auto a = assess_at(c, point, lam, config, out.evaluations);
            if (!a.feasible) {
                hi = lam;
                hi_tag = a.tag;
                bracketed = true;
                break;
            }
            lo = lam;
            lo_state = std::move(a);
            if (lam >= config.lambda_cap) break;
        }
        if (!bracketed) hi_tag = "unconstrained";
    }

    // Invariant: lo feasible, hi infeasible.
    while (hi_tag != "unconstrained" && hi - lo > config.tolerance) {
        const double mid = 0.5 * (lo + hi);
        auto a = assess_at(c, point, mid, config, out.evaluations);
        if (a.feasible) {
            lo = mid;
            lo_state = std::move(a);
        } else {
            hi = mid;
            hi_tag = a.tag;
        }
    }
    out.lambda = lo;
    out.binding = hi_tag;
    out.point = *lo_state.point;
    const auto scaled = scale_transfer(c, point, lo);
    for (const auto& t : c.tie_lines) out.gamma.push_back(grid::line_flow(scaled.c, out.point, t.line_id, t.sending_bus));
    return out;
}

nlohmann::json to_json(const TtcResult& r) {
    nlohmann::json gamma = nlohmann::json::object();
    for (std::size_t i = 0; i < r.tie_lines.size(); ++i) gamma[r.tie_lines[i]] = r.gamma[i] * grid::kBaseMva;
    return {{"lambda", r.lambda},
            {"gamma_mw", gamma},
            {"total_mw", r.total() * grid::kBaseMva},
            {"binding", r.binding},
            {"evaluations", r.evaluations}};
}

nlohmann::json to_json(const TtcSearchConfig& c) {
    std::vector<std::string> ids;
    for (const auto& k : c.contingencies) ids.push_back(k.id);
    return {{"lambda_cap", c.lambda_cap},
            {"lambda_floor", c.lambda_floor},
            {"tolerance", c.tolerance},
            {"coarse_step", c.coarse_step},
            {"checks", {{"voltage", c.checks.voltage}, {"thermal", c.checks.thermal}, {"reactive", c.checks.reactive}}},
            {"contingencies", ids},
            {"delta_max", c.criterion.delta_max},
            {"t_end", c.simulation.t_end},
            {"step", c.simulation.step}};
}

}  // namespace tcop::ttc
