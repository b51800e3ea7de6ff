#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcop/grid/network.hpp"

namespace tcop::planner {

/// Load and wind forecasts over the whole study window. Period p (0-based)
/// is hour p + 1; the committed interval is given in those 1-based hours.
struct Scenario {
    std::string name;
    double period_hours = 1.0;
    int horizon = 24;
    int first_period = 2;
    int last_period = 25;
    std::vector<std::vector<double>> load_p;  // [period][bus], p.u., case bus order
    std::vector<std::vector<double>> load_q;
    std::vector<std::vector<double>> wind;    // [period][farm], forecast p.u.
    double margin = 0.05;                      // tie-line security margin, p.u.

    std::size_t periods() const { return load_p.size(); }
    void validate(const grid::NetworkCase& c) const;
    /// Rows of P per bus then Q per bus, one per period.
    std::vector<std::vector<double>> load_history() const;
    /// The case with the loads and wind forecast of one period.
    grid::NetworkCase at(const grid::NetworkCase& c, std::size_t period) const;

    nlohmann::json to_json(const grid::NetworkCase& c) const;
    /// Accepts either "load_factor" (scaling the case loads) or explicit
    /// "load_p_mw"/"load_q_mvar" matrices; wind as "wind_mw": {farm: [...]}.
    static Scenario from_json(const nlohmann::json& j, const grid::NetworkCase& c);
};

Scenario load_scenario(const std::filesystem::path& path, const grid::NetworkCase& c);

}  // namespace tcop::planner
