#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcop/dynamics/simulation.hpp"
#include "tcop/grid/network.hpp"
#include "tcop/grid/power_flow.hpp"

namespace tcop::ttc {

struct StaticChecks {
    bool voltage = true;
    bool thermal = true;
    bool reactive = true;
};

struct TtcSearchConfig {
    double lambda_cap = 1.0;
    double tolerance = 0.01;
    double coarse_step = 0.1;
    /// When negative, an infeasible base point is bracketed downwards to this
    /// value instead of raising BaseInfeasible.
    double lambda_floor = 0.0;
    StaticChecks checks;
    std::vector<dynamics::ContingencySpec> contingencies;
    dynamics::StabilityCriterion criterion;
    dynamics::SimulationConfig simulation;
    grid::PowerFlowOptions power_flow;
    int jobs = 1;  // concurrent contingency simulations

    void validate() const;
};

struct TtcResult {
    double lambda = 0.0;
    std::vector<std::string> tie_lines;
    std::vector<double> gamma;  // p.u., measured at each tie-line's sending bus
    std::string binding;        // check failed just above lambda, or "unconstrained"
    int evaluations = 0;
    grid::OperatingPoint point;  // solved flow at lambda

    double total() const;
};

class CapacityExhausted : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class BaseInfeasible : public std::runtime_error {
  public:
    BaseInfeasible(const std::string& tag);
    std::string tag;
};

struct ScaledSystem {
    grid::NetworkCase c;
    grid::OperatingPoint point;  // setpoints for the power flow
};

/// Sink loads become (1 + lambda) times base at constant power factor; source
/// generators pick up the increment in proportion to their headroom (footroom
/// for lambda < 0). The slack covers the change in losses.
ScaledSystem scale_transfer(const grid::NetworkCase& c, const grid::OperatingPoint& point, double lambda);

struct Assessment {
    bool feasible = false;
    std::string tag;  // empty when feasible
    std::optional<grid::OperatingPoint> point;
};

/// Power flow, static limits, then every contingency in turn. Stops at the first failure.
Assessment assess_feasible(const grid::NetworkCase& c, const grid::OperatingPoint& setpoints,
                           const TtcSearchConfig& config);

/// Static-limit check on a solved point; returns the failing tag or empty.
std::string static_violation(const grid::NetworkCase& c, const grid::OperatingPoint& p, const StaticChecks& checks,
                             double tol = 1e-6);

/// Largest feasible lambda by an upward march followed by bisection.
TtcResult compute_ttc(const grid::NetworkCase& c, const grid::OperatingPoint& point, const TtcSearchConfig& config);

nlohmann::json to_json(const TtcResult& r);
nlohmann::json to_json(const TtcSearchConfig& c);

}  // namespace tcop::ttc
