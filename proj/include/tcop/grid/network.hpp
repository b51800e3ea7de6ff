#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcop::grid {

/// System base. Everything inside the library is per-unit on this base;
/// MW/MVAr only appear in case and report files.
inline constexpr double kBaseMva = 100.0;

enum class BusType { slack, pv, pq };
enum class Area { none, source, sink };

struct Bus {
    int id = 0;
    BusType type = BusType::pq;
    Area area = Area::none;
    double pd = 0.0;  // base load, p.u.
    double qd = 0.0;
    double gs = 0.0;  // shunt conductance/susceptance, p.u.
    double bs = 0.0;
    double v_min = 0.94;
    double v_max = 1.06;
};

/// Pi-model branch with an optional off-nominal tap on the from side.
struct Line {
    std::string id;
    int from = 0;
    int to = 0;
    double r = 0.0;
    double x = 0.0;
    double b = 0.0;    // total line charging
    double tap = 1.0;
    double p_min = -99.0;  // active-flow limits at the from end, p.u.
    double p_max = 99.0;
};

struct Generator {
    std::string id;
    int bus = 0;
    double p = 0.0;      // dispatch, p.u.
    double vg = 1.0;     // voltage setpoint
    double p_min = 0.0;
    double p_max = 0.0;
    double q_min = 0.0;
    double q_max = 0.0;
    double ramp_down = 99.0;  // p.u. per hour
    double ramp_up = 99.0;
    double h = 5.0;           // inertia constant on system base, s
    double xd_prime = 0.1;    // transient reactance, p.u.
    double damping = 0.0;
    // Cost in $/h with P in MW: a P^2 + b P + c.
    double cost_a = 0.0;
    double cost_b = 0.0;
    double cost_c = 0.0;
};

struct WindFarm {
    std::string id;
    int bus = 0;
    double rated = 0.0;  // p.u.
    double p = 0.0;      // current output, p.u.
    double cut_in_speed = 3.0;
    double rated_speed = 12.0;
    double cut_out_speed = 25.0;
    double curtail_cost = 0.0;  // $/MWh
};

struct EnergyStorage {
    std::string id;
    int bus = 0;
    double p_charge_max = 0.0;     // p.u.
    double p_discharge_max = 0.0;  // p.u.
    double e_min = 0.0;            // p.u.*h
    double e_max = 0.0;
    double e0 = 0.0;
    double p = 0.0;  // discharge positive
};

/// A tie-line is a line together with the bus its transfer is measured at.
struct TieLine {
    std::string line_id;
    int sending_bus = 0;
};

class InvalidCase : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Static grid description. Buses keep file order; lookups go through bus ids.
class NetworkCase {
  public:
    std::string name;
    std::vector<Bus> buses;
    std::vector<Line> lines;
    std::vector<Generator> generators;
    std::vector<WindFarm> wind_farms;
    std::vector<EnergyStorage> storage;
    std::vector<TieLine> tie_lines;

    /// Throws InvalidCase on any broken reference or limit pair.
    void validate() const;

    std::size_t bus_index(int bus_id) const;
    std::optional<std::size_t> find_bus(int bus_id) const;
    std::size_t line_index(const std::string& line_id) const;
    std::size_t slack_index() const;
    /// Generator attached to a bus, if any.
    std::optional<std::size_t> generator_at(int bus_id) const;

    double total_load_p() const;
    double total_load_q() const;
};

std::string to_string(BusType type);
BusType bus_type_from_string(const std::string& s);
std::string to_string(Area area);
Area area_from_string(const std::string& s);

}  // namespace tcop::grid
