#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tcop/dataset/dataset.hpp"

namespace tcop::surrogate {

/// Hidden-layer activation. `sigmoid` is the tanh form 2/(1+e^{-2x}) - 1.
enum class Activation { sigmoid, softplus };

double activation(Activation kind, double x);
double activation_d1(Activation kind, double x);
double activation_d2(Activation kind, double x);

std::string to_string(Activation kind);
Activation activation_from_string(const std::string& s);

enum class Family { elastic_net, slnn, dlnn };
std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct Layer {
    Eigen::MatrixXd w;  // outputs x inputs
    Eigen::VectorXd b;
};

// ---------------------------------------------------------------------------
// Derivative formulas in normalized coordinates. `layers` ends with the linear
// output layer; every earlier layer is followed by the activation.

Eigen::VectorXd forward(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z);

/// One hidden layer: J = w2 diag(S'(a1)) w1, H_l = w1^T diag(w2[l,:] .* S''(a1)) w1.
Eigen::MatrixXd slnn_jacobian(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z);
Eigen::MatrixXd slnn_hessian(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z,
                             std::size_t output);

/// Any depth: ordered product of Q_l = diag(S'(a_l)) w_l for the Jacobian and
/// the sum of per-layer terms for the Hessian.
Eigen::MatrixXd dlnn_jacobian(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z);
Eigen::MatrixXd dlnn_hessian(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z,
                             std::size_t output);

// ---------------------------------------------------------------------------

class ModelMismatch : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Trained TTC estimator in physical units: features in, Gamma per tie-line
/// (p.u.) out. Input and output normalization are part of the model, so the
/// Jacobian and Hessian are with respect to raw features.
class SurrogateModel {
  public:
    Family family = Family::elastic_net;
    Activation activation = Activation::sigmoid;
    std::vector<Layer> layers;
    dataset::Normalization input_norm;
    dataset::Normalization output_norm;
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;
    std::string layout_hash;
    std::string case_hash;
    nlohmann::json training = nlohmann::json::object();

    void validate() const;
    std::size_t inputs() const;
    std::size_t outputs() const;
    std::size_t hidden_layers() const { return layers.empty() ? 0 : layers.size() - 1; }
    /// Throws ModelMismatch unless the model was trained on this feature layout.
    void check_layout(const std::string& hash, std::size_t dimension) const;

    Eigen::VectorXd predict(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd predict_rows(const Eigen::MatrixXd& rows) const;
    /// outputs x inputs
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;
    /// inputs x inputs, exactly symmetric.
    Eigen::MatrixXd hessian(const Eigen::VectorXd& x, std::size_t output) const;

    nlohmann::json to_json() const;
    static SurrogateModel from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static SurrogateModel load(const std::filesystem::path& path);

  private:
    Eigen::VectorXd normalize(const Eigen::VectorXd& x) const;
};

/// Elastic-net coefficients as a model: one linear layer, no hidden layers.
SurrogateModel linear_model(const Eigen::MatrixXd& beta, const Eigen::VectorXd& intercept);

// ---------------------------------------------------------------------------
// Training.

struct TrainingConfig {
    Family family = Family::dlnn;
    std::vector<int> hidden;
    Activation activation = Activation::sigmoid;
    double gamma = 0.5;   // data-term weight of the MLP loss
    double gamma1 = 0.5;  // elastic-net L1 weight
    double gamma2 = 0.5;  // elastic-net L2 weight
    int max_iterations = 3000;
    double gradient_tolerance = 1e-9;
    double gap_tolerance = 1e-10;  // elastic-net duality gap, relative to ||y||^2
    double validation_fraction = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

/// Architectures by name: en, slnn, dl2, dl3, dl5.
TrainingConfig preset(const std::string& name);
std::vector<std::string> preset_names();

class TrainingDiverged : public std::runtime_error {
  public:
    TrainingDiverged(const std::string& what, SurrogateModel last_stable);
    SurrogateModel last_stable;
};

SurrogateModel train_elastic_net(const dataset::TrainingDataset& data, const TrainingConfig& config);
SurrogateModel train_mlp(const dataset::TrainingDataset& data, const TrainingConfig& config);
SurrogateModel train(const dataset::TrainingDataset& data, const TrainingConfig& config);

/// Mean squared error over all rows and outputs, p.u.^2.
double mse(const SurrogateModel& model, const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets);

}  // namespace tcop::surrogate
