#include "tcop/planner/scenario.hpp"

#include <fstream>

namespace tcop::planner {

void Scenario::validate(const grid::NetworkCase& c) const {
    if (!(period_hours > 0.0)) throw std::invalid_argument("period length must be positive");
    if (horizon < 1) throw std::invalid_argument("horizon must be at least one period");
    if (margin < 0.0) throw std::invalid_argument("security margin must be nonnegative");
    if (first_period < 2 || last_period < first_period) {
        throw std::invalid_argument("committed interval must start after the initial hour and be nonempty");
    }
    if (load_p.size() != load_q.size() || wind.size() != load_p.size()) {
        throw std::invalid_argument("forecast series differ in length");
    }
    if (static_cast<std::size_t>(last_period - 1 + horizon) > periods()) {
        throw std::invalid_argument("forecasts do not cover the last horizon (need " +
                                    std::to_string(last_period - 1 + horizon) + " periods, have " +
                                    std::to_string(periods()) + ")");
    }
    for (std::size_t t = 0; t < periods(); ++t) {
        if (load_p[t].size() != c.buses.size() || load_q[t].size() != c.buses.size()) {
            throw std::invalid_argument("load forecast width does not match the bus count");
        }
        if (wind[t].size() != c.wind_farms.size()) throw std::invalid_argument("wind forecast width does not match the farm count");
        for (double w : wind[t]) {
            if (w < 0.0) throw std::invalid_argument("wind forecast must be nonnegative");
        }
        for (double p : load_p[t]) {
            if (p < 0.0) throw std::invalid_argument("load forecast must be nonnegative");
        }
    }
}

std::vector<std::vector<double>> Scenario::load_history() const {
    std::vector<std::vector<double>> out;
    for (std::size_t t = 0; t < periods(); ++t) {
        auto row = load_p[t];
        row.insert(row.end(), load_q[t].begin(), load_q[t].end());
        out.push_back(std::move(row));
    }
    return out;
}

grid::NetworkCase Scenario::at(const grid::NetworkCase& c, std::size_t period) const {
    if (period >= periods()) throw std::out_of_range("scenario period out of range");
    auto out = c;
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        out.buses[i].pd = load_p[period][i];
        out.buses[i].qd = load_q[period][i];
    }
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) out.wind_farms[w].p = wind[period][w];
    return out;
}

nlohmann::json Scenario::to_json(const grid::NetworkCase& c) const {
    auto scaled = [](const std::vector<std::vector<double>>& m) {
        auto out = m;
        for (auto& row : out) {
            for (auto& v : row) v *= grid::kBaseMva;
        }
        return out;
    };
    nlohmann::json wind_mw = nlohmann::json::object();
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) {
        std::vector<double> series;
        for (const auto& row : wind) series.push_back(row[w] * grid::kBaseMva);
        wind_mw[c.wind_farms[w].id] = series;
    }
    return {{"name", name},
            {"period_hours", period_hours},
            {"horizon", horizon},
            {"interval", {first_period, last_period}},
            {"margin_pu", margin},
            {"load_p_mw", scaled(load_p)},
            {"load_q_mvar", scaled(load_q)},
            {"wind_mw", wind_mw}};
}

Scenario Scenario::from_json(const nlohmann::json& j, const grid::NetworkCase& c) {
    Scenario s;
    s.name = j.value("name", "");
    s.period_hours = j.value("period_hours", 1.0);
    s.horizon = j.value("horizon", 24);
    if (j.contains("interval")) {
        s.first_period = j.at("interval").at(0).get<int>();
        s.last_period = j.at("interval").at(1).get<int>();
    }
    s.margin = j.value("margin_pu", 0.05);
    if (j.contains("load_factor")) {
        for (double f : j.at("load_factor").get<std::vector<double>>()) {
            std::vector<double> p, q;
            for (const auto& b : c.buses) {
                p.push_back(f * b.pd);
                q.push_back(f * b.qd);
            }
            s.load_p.push_back(std::move(p));
            s.load_q.push_back(std::move(q));
        }
    } else {
        s.load_p = j.at("load_p_mw").get<std::vector<std::vector<double>>>();
        s.load_q = j.at("load_q_mvar").get<std::vector<std::vector<double>>>();
        for (auto* m : {&s.load_p, &s.load_q}) {
            for (auto& row : *m) {
                for (auto& v : row) v /= grid::kBaseMva;
            }
        }
    }
    s.wind.assign(s.load_p.size(), std::vector<double>(c.wind_farms.size(), 0.0));
    const auto& wind_mw = j.value("wind_mw", nlohmann::json::object());
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) {
        if (!wind_mw.contains(c.wind_farms[w].id)) continue;
        const auto series = wind_mw.at(c.wind_farms[w].id).get<std::vector<double>>();
        if (series.size() != s.load_p.size()) throw std::invalid_argument("wind series length differs from the load series");
        for (std::size_t t = 0; t < series.size(); ++t) s.wind[t][w] = series[t] / grid::kBaseMva;
    }
    s.validate(c);
    return s;
}

Scenario load_scenario(const std::filesystem::path& path, const grid::NetworkCase& c) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read scenario " + path.string());
    return Scenario::from_json(nlohmann::json::parse(in), c);
}

}  // namespace tcop::planner
