#pragma once

#include <filesystem>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcop/grid/network.hpp"
#include "tcop/grid/power_flow.hpp"

namespace tcop::dynamics {

inline constexpr double kNominalFrequencyHz = 60.0;

/// A bolted three-phase fault at one end of a line, cleared after
/// `clearing_time` seconds by tripping the line (or by fault removal alone).
struct ContingencySpec {
    std::string id;
    std::string line_id;
    int fault_bus = 0;
    double fault_time = 0.0;
    double clearing_time = 0.1;
    bool trip_line = true;

    void validate(const grid::NetworkCase& c) const;
};

enum class Integrator { trapezoidal };

struct SimulationConfig {
    double t_end = 3.0;
    double step = 0.05;
    Integrator scheme = Integrator::trapezoidal;
    /// Stop integrating once some |delta_i - delta_COI| reaches this angle.
    std::optional<double> stop_excursion;
    /// Below this voltage constant-power injections behave as constant impedance.
    double low_voltage_threshold = 0.7;

    void validate() const;
};

struct StabilityCriterion {
    double delta_max = std::numbers::pi;
};

/// Rotor angles (rad) and speed deviations (rad/s), one row per time sample.
struct Trajectory {
    std::vector<double> time;
    std::vector<std::vector<double>> angle;
    std::vector<std::vector<double>> speed;
    std::vector<double> coi;
    std::vector<double> inertia;  // M_i used for the COI
    bool truncated = false;       // stopped early on the excursion limit

    std::size_t machines() const { return inertia.size(); }
    void write_csv(const std::filesystem::path& path, const std::vector<std::string>& names = {}) const;
};

class SimulationCollapse : public std::runtime_error {
  public:
    SimulationCollapse(const std::string& what, double time_);
    double time;
};

class InvalidContingency : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Classical model: constant EMF behind x'd, constant-impedance loads, constant
/// power wind/storage injections. Without a contingency the steady state is held.
Trajectory simulate(const grid::NetworkCase& c, const grid::OperatingPoint& point,
                    const std::optional<ContingencySpec>& contingency, const SimulationConfig& config);

/// Inertia-weighted mean angle.
double coi_angle(std::span<const double> angles, std::span<const double> inertias);

struct StabilityVerdict {
    bool stable = true;
    double worst_excursion = 0.0;
};

/// Stable iff |delta_i - delta_COI| < delta_max at every sample for every machine.
StabilityVerdict check_stability(const Trajectory& traj, const StabilityCriterion& criterion);

/// M_i = 2 H_i / omega_s.
double machine_inertia(const grid::Generator& g);

std::vector<ContingencySpec> contingencies_from_json(const nlohmann::json& case_json);
nlohmann::json contingency_to_json(const ContingencySpec& c);

}  // namespace tcop::dynamics
