#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tcop/grid/network.hpp"
#include "tcop/grid/power_flow.hpp"
#include "tcop/ttc/ttc.hpp"

namespace tcop::dataset {

/// Fractional part of r*n, evaluated in extended precision so that large
/// multipliers such as e^40 keep their low-order digits.
double weyl_sequence(double r, std::uint64_t n);
/// Same point for the multiplier e^j.
double weyl_exp(int j, std::uint64_t n);

// ---------------------------------------------------------------------------
// Features.

enum class FeatureKind { p_injection, q_injection, v_setpoint, p_load, q_load, v_bus };
enum class UnitKind { generator, wind, storage, bus };

struct FeatureSlot {
    FeatureKind kind;
    UnitKind unit;
    std::size_t index;  // into the case's device or bus list
    std::string name;
};

/// Fixed feature ordering of a case: injections of every generator, wind farm
/// and storage unit (by bus id, then kind, then id), generator voltage
/// setpoints, bus loads and bus voltages (by bus id).
struct FeatureLayout {
    std::vector<FeatureSlot> slots;

    static FeatureLayout of(const grid::NetworkCase& c);
    std::size_t size() const { return slots.size(); }
    std::vector<std::string> names() const;
    /// Fingerprint of the ordering, stored with datasets and models.
    std::string hash() const;
};

/// Features of a solved point; `c` supplies the loads.
Eigen::VectorXd extract_features(const grid::OperatingPoint& p, const grid::NetworkCase& c, const FeatureLayout& layout);
Eigen::VectorXd extract_features(const grid::OperatingPoint& p, const grid::NetworkCase& c);

// ---------------------------------------------------------------------------
// Sampling.

struct SamplingConfig {
    // Control variables: P of every generator, wind farm and storage unit
    // followed by generator voltage setpoints, each in case order.
    std::vector<double> con_min;
    std::vector<double> con_max;
    // Loads: P of every bus then Q of every bus, in case bus order.
    std::vector<double> load_mean;
    std::vector<double> load_deviation;  // maximum historical deviation
    double expansion = 1.2;
    std::size_t samples = 0;
    std::uint64_t first_index = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static SamplingConfig from_json(const nlohmann::json& j);
    /// Bounds from the case limits and a load history (rows = periods, P then Q per bus).
    static SamplingConfig defaults(const grid::NetworkCase& c, const std::vector<std::vector<double>>& load_history,
                                   std::size_t samples);
};

struct Condition {
    std::vector<double> con;
    std::vector<double> load;
};

std::vector<Condition> sample_conditions(const SamplingConfig& config);

/// Case and power-flow setpoints realising a sampled condition. Generator
/// outputs are shifted in proportion to rating so that the slack starts near
/// its sampled value; throws std::domain_error when they cannot balance the load.
struct Realised {
    grid::NetworkCase c;
    grid::OperatingPoint setpoints;
};
Realised realise(const grid::NetworkCase& base, const Condition& cond);

// ---------------------------------------------------------------------------
// Dataset.

/// Per-column affine map z = (x - mean) / scale. Constant columns get scale 1.
struct Normalization {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static Normalization fit(const Eigen::MatrixXd& rows);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
    Eigen::MatrixXd invert(const Eigen::MatrixXd& rows) const;
    nlohmann::json to_json() const;
    static Normalization from_json(const nlohmann::json& j);
};

struct DropCounts {
    std::size_t unbalanced = 0;
    std::size_t power_flow = 0;
    std::size_t static_limits = 0;
    std::size_t no_secure_transfer = 0;

    std::size_t total() const { return unbalanced + power_flow + static_limits + no_secure_transfer; }
};

struct TrainingDataset {
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;
    Eigen::MatrixXd features;  // raw units, one row per sample
    Eigen::MatrixXd targets;   // Gamma per tie-line, p.u.
    std::vector<std::uint64_t> sample_index;  // Weyl index n of each row
    std::size_t n_train = 0;
    Normalization feature_norm;
    Normalization target_norm;
    std::string case_hash;
    std::string layout_hash;
    nlohmann::json sampling;
    nlohmann::json labeling;
    nlohmann::json manifest = nlohmann::json::object();
    DropCounts dropped;
    std::size_t requested = 0;

    std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
    Eigen::MatrixXd train_features() const { return features.topRows(static_cast<Eigen::Index>(n_train)); }
    Eigen::MatrixXd train_targets() const { return targets.topRows(static_cast<Eigen::Index>(n_train)); }
    Eigen::MatrixXd test_features() const { return features.bottomRows(features.rows() - static_cast<Eigen::Index>(n_train)); }
    Eigen::MatrixXd test_targets() const { return targets.bottomRows(targets.rows() - static_cast<Eigen::Index>(n_train)); }

    /// CSV (features then targets) next to a JSON sidecar with the same stem.
    void save(const std::filesystem::path& csv_path) const;
    static TrainingDataset load(const std::filesystem::path& csv_path);
};

class DegenerateDataset : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct LabelOutcome {
    enum class Status { ok, unbalanced, power_flow, static_limits, no_secure_transfer } status = Status::ok;
    Eigen::VectorXd features;
    ttc::TtcResult ttc;
};

/// Number of training rows for `kept` samples: floor(fraction * kept).
std::size_t train_count(std::size_t kept, double split_fraction);

/// Power flow, feature extraction and TTC label for one condition.
LabelOutcome label_condition(const grid::NetworkCase& c, const Condition& cond, const ttc::TtcSearchConfig& config);

/// Samples, labels, splits (first `split_fraction` of kept rows train) and
/// fits the normalization on the training rows. Row order follows the sample
/// index whatever the worker count.
TrainingDataset build_dataset(const grid::NetworkCase& c, const SamplingConfig& sampling,
                              const ttc::TtcSearchConfig& ttc_config, double split_fraction, int jobs = 1);

}  // namespace tcop::dataset
