#include "tcop/grid/network.hpp"

#include <algorithm>
#include <set>
#include <utility>

namespace tcop::grid {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidCase(what);
}

}  // namespace

void NetworkCase::validate() const {
    require(!buses.empty(), "case has no buses");
    std::set<int> ids;
    int slack_count = 0;
    for (const auto& b : buses) {
        require(ids.insert(b.id).second, "duplicate bus id " + std::to_string(b.id));
        require(b.v_min <= b.v_max, "bus " + std::to_string(b.id) + ": v_min > v_max");
        if (b.type == BusType::slack) ++slack_count;
    }
    require(slack_count == 1, "case must have exactly one slack bus");

    std::set<std::tuple<int, int, std::string>> seen_lines;
    std::set<std::string> line_ids;
    for (const auto& l : lines) {
        require(ids.count(l.from) && ids.count(l.to), "line " + l.id + " references unknown bus");
        require(l.from != l.to, "line " + l.id + " is a self loop");
        require(l.p_min <= l.p_max, "line " + l.id + ": p_min > p_max");
        require(l.tap > 0.0, "line " + l.id + ": tap must be positive");
        require(l.r != 0.0 || l.x != 0.0, "line " + l.id + ": zero series impedance");
        auto key = std::make_tuple(std::min(l.from, l.to), std::max(l.from, l.to), l.id);
        require(seen_lines.insert(key).second, "duplicate line " + l.id + " between the same buses");
        require(line_ids.insert(l.id).second, "duplicate line id " + l.id);
    }

    std::set<int> gen_buses;
    for (const auto& g : generators) {
        require(ids.count(g.bus), "generator " + g.id + " references unknown bus");
        require(gen_buses.insert(g.bus).second, "more than one generator at bus " + std::to_string(g.bus));
        require(g.p_min <= g.p_max, "generator " + g.id + ": p_min > p_max");
        require(g.q_min <= g.q_max, "generator " + g.id + ": q_min > q_max");
        require(-g.ramp_down <= g.ramp_up, "generator " + g.id + ": ramp limits inverted");
        require(g.h > 0.0, "generator " + g.id + ": inertia must be positive");
        require(g.xd_prime > 0.0, "generator " + g.id + ": transient reactance must be positive");
        require(g.cost_a >= 0.0, "generator " + g.id + ": negative quadratic cost");
    }
    for (const auto& b : buses) {
        if (b.type != BusType::pq) {
            require(gen_buses.count(b.id), "voltage-controlled bus " + std::to_string(b.id) + " has no generator");
        }
    }
    for (const auto& w : wind_farms) {
        require(ids.count(w.bus), "wind farm " + w.id + " references unknown bus");
        require(w.rated >= 0.0, "wind farm " + w.id + ": negative rating");
        require(w.cut_in_speed <= w.rated_speed && w.rated_speed <= w.cut_out_speed,
                "wind farm " + w.id + ": speed thresholds out of order");
    }
    for (const auto& e : storage) {
        require(ids.count(e.bus), "storage " + e.id + " references unknown bus");
        require(e.p_charge_max >= 0.0 && e.p_discharge_max >= 0.0, "storage " + e.id + ": negative power limit");
        require(e.e_min <= e.e_max, "storage " + e.id + ": e_min > e_max");
    }
    for (const auto& t : tie_lines) {
        const auto& l = lines.at(line_index(t.line_id));
        require(t.sending_bus == l.from || t.sending_bus == l.to,
                "tie-line " + t.line_id + " sending bus is not an endpoint");
    }
}

std::optional<std::size_t> NetworkCase::find_bus(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == bus_id) return i;
    }
    return std::nullopt;
}

std::size_t NetworkCase::bus_index(int bus_id) const {
    auto i = find_bus(bus_id);
    if (!i) throw InvalidCase("unknown bus " + std::to_string(bus_id));
    return *i;
}

std::size_t NetworkCase::line_index(const std::string& line_id) const {
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].id == line_id) return i;
    }
    throw InvalidCase("unknown line " + line_id);
}

std::size_t NetworkCase::slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].type == BusType::slack) return i;
    }
    throw InvalidCase("case has no slack bus");
}

std::optional<std::size_t> NetworkCase::generator_at(int bus_id) const {
    for (std::size_t g = 0; g < generators.size(); ++g) {
        if (generators[g].bus == bus_id) return g;
    }
    return std::nullopt;
}

double NetworkCase::total_load_p() const {
    double s = 0.0;
    for (const auto& b : buses) s += b.pd;
    return s;
}

double NetworkCase::total_load_q() const {
    double s = 0.0;
    for (const auto& b : buses) s += b.qd;
    return s;
}

std::string to_string(BusType type) {
    switch (type) {
        case BusType::slack: return "slack";
        case BusType::pv: return "pv";
        case BusType::pq: return "pq";
    }
    return "pq";
}

BusType bus_type_from_string(const std::string& s) {
    if (s == "slack") return BusType::slack;
    if (s == "pv") return BusType::pv;
    if (s == "pq") return BusType::pq;
    throw InvalidCase("unknown bus type '" + s + "'");
}

std::string to_string(Area area) {
    switch (area) {
        case Area::none: return "none";
        case Area::source: return "source";
        case Area::sink: return "sink";
    }
    return "none";
}

Area area_from_string(const std::string& s) {
    if (s == "none" || s.empty()) return Area::none;
    if (s == "source") return Area::source;
    if (s == "sink") return Area::sink;
    throw InvalidCase("unknown area '" + s + "'");
}

}  // namespace tcop::grid
