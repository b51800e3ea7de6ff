#include <cmath>
#include <limits>
#include <random>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include "tcop/surrogate/surrogate.hpp"

namespace tcop::surrogate {

void TrainingConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("loss weight gamma must be in [0, 1]");
    if (gamma1 < 0.0 || gamma2 < 0.0) throw std::invalid_argument("elastic-net weights must be nonnegative");
    if (max_iterations <= 0) throw std::invalid_argument("iteration budget must be positive");
    if (!(gradient_tolerance > 0.0) || !(gap_tolerance > 0.0)) throw std::invalid_argument("tolerances must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw std::invalid_argument("validation fraction must be in [0, 1)");
    }
    for (int n : hidden) {
        if (n <= 0) throw std::invalid_argument("hidden layer widths must be positive");
    }
    const auto depth = hidden.size();
    if ((family == Family::elastic_net && depth != 0) || (family == Family::slnn && depth != 1) ||
        (family == Family::dlnn && depth < 2)) {
        throw std::invalid_argument("hidden layer count does not match the model family");
    }
}

nlohmann::json TrainingConfig::to_json() const {
    return {{"family", to_string(family)},
            {"hidden", hidden},
            {"activation", to_string(activation)},
            {"gamma", gamma},
            {"gamma1", gamma1},
            {"gamma2", gamma2},
            {"max_iterations", max_iterations},
            {"gradient_tolerance", gradient_tolerance},
            {"gap_tolerance", gap_tolerance},
            {"validation_fraction", validation_fraction},
            {"seed", seed}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.family = family_from_string(j.at("family").get<std::string>());
    c.hidden = j.value("hidden", std::vector<int>{});
    c.activation = activation_from_string(j.value("activation", std::string("sigmoid")));
    c.gamma = j.value("gamma", c.gamma);
    c.gamma1 = j.value("gamma1", c.gamma1);
    c.gamma2 = j.value("gamma2", c.gamma2);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.gradient_tolerance = j.value("gradient_tolerance", c.gradient_tolerance);
    c.gap_tolerance = j.value("gap_tolerance", c.gap_tolerance);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

TrainingConfig preset(const std::string& name) {
    TrainingConfig c;
    c.gamma = 0.03;
    if (name == "en") {
        c.family = Family::elastic_net;
    } else if (name == "slnn" || name == "sllnn") {
        c.family = Family::slnn;
        c.hidden = {10};
    } else if (name == "dl2") {
        c.hidden = {40, 20};
    } else if (name == "dl3") {
        c.hidden = {80, 40, 20};
    } else if (name == "dl5") {
        c.gamma = 0.5;
        c.hidden = {40, 20, 10, 5, 2};
        c.activation = Activation::softplus;
    } else {
        throw std::invalid_argument("unknown architecture preset '" + name + "'");
    }
    return c;
}

std::vector<std::string> preset_names() { return {"en", "slnn", "dl2", "dl3", "dl5"}; }

TrainingDiverged::TrainingDiverged(const std::string& what, SurrogateModel last)
    : std::runtime_error(what), last_stable(std::move(last)) {}

namespace {

SurrogateModel shell(const dataset::TrainingDataset& data, Family family, Activation act) {
    SurrogateModel m;
    m.family = family;
    m.activation = act;
    m.input_norm = data.feature_norm;
    m.output_norm = data.target_norm;
    m.feature_names = data.feature_names;
    m.target_names = data.target_names;
    m.layout_hash = data.layout_hash;
    m.case_hash = data.case_hash;
    return m;
}

void require_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + " contain non-finite values");
}

double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

// Minimizes ||y - U b||^2 + g1 |b|_1 + g2 |b|^2 for centred U, y.
Eigen::VectorXd coordinate_descent(const Eigen::MatrixXd& u, const Eigen::VectorXd& y, double g1, double g2,
                                   double tol, int max_sweeps, int& sweeps, double& gap) {
    const auto p = u.cols();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd r = y;
    const Eigen::VectorXd norms = u.colwise().squaredNorm().transpose();
    const double alpha = 0.5 * g1;
    const double yy = y.squaredNorm();
    gap = std::numeric_limits<double>::infinity();
    for (sweeps = 1; sweeps <= max_sweeps; ++sweeps) {
        for (Eigen::Index j = 0; j < p; ++j) {
            if (norms[j] == 0.0) continue;
            const double old = beta[j];
            const double rho = u.col(j).dot(r) + norms[j] * old;
            beta[j] = soft_threshold(rho, alpha) / (norms[j] + g2);
            if (beta[j] != old) r -= (beta[j] - old) * u.col(j);
        }
        // Duality gap of 1/2|r|^2 + alpha|b|_1 + g2/2 |b|^2.
        const Eigen::VectorXd xta = u.transpose() * r - g2 * beta;
        const double dual_norm = xta.cwiseAbs().maxCoeff();
        const double rr = r.squaredNorm();
        double scale = 1.0;
        if (dual_norm > alpha && dual_norm > 0.0) scale = alpha / dual_norm;
        gap = 0.5 * rr * (1.0 + scale * scale) + alpha * beta.lpNorm<1>() - scale * r.dot(y) +
              0.5 * g2 * (1.0 + scale * scale) * beta.squaredNorm();
        if (gap <= tol * std::max(yy, 1e-300)) break;
    }
    return beta;
}

// Full-batch loss gamma |Y - net(U)|^2 + (1 - gamma) sum |w|^2 in normalized space.
class MlpLoss : public ceres::FirstOrderFunction {
  public:
    MlpLoss(std::vector<Eigen::Index> widths, Activation act, double gamma, Eigen::MatrixXd u, Eigen::MatrixXd y)
        : widths_(std::move(widths)), act_(act), gamma_(gamma), u_(std::move(u)), y_(std::move(y)) {}

    int NumParameters() const override {
        int n = 0;
        for (std::size_t l = 1; l < widths_.size(); ++l) n += static_cast<int>(widths_[l] * (widths_[l - 1] + 1));
        return n;
    }

    std::vector<Layer> unpack(const double* p) const {
        std::vector<Layer> layers;
        for (std::size_t l = 1; l < widths_.size(); ++l) {
            const auto rows = widths_[l], cols = widths_[l - 1];
            Layer layer;
            layer.w = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(p, rows, cols);
            p += rows * cols;
            layer.b = Eigen::Map<const Eigen::VectorXd>(p, rows);
            p += rows;
            layers.push_back(std::move(layer));
        }
        return layers;
    }

    static std::vector<double> pack(const std::vector<Layer>& layers) {
        std::vector<double> out;
        for (const auto& l : layers) {
            for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
                for (Eigen::Index c = 0; c < l.w.cols(); ++c) out.push_back(l.w(r, c));
            }
            for (Eigen::Index r = 0; r < l.b.size(); ++r) out.push_back(l.b[r]);
        }
        return out;
    }

    bool Evaluate(const double* p, double* cost, double* gradient) const override {
        const auto layers = unpack(p);
        const auto n_layers = layers.size();
        // Columns are samples.
        std::vector<Eigen::MatrixXd> act(n_layers), pre(n_layers);
        act[0] = u_;
        for (std::size_t l = 0; l + 1 < n_layers; ++l) {
            pre[l] = (layers[l].w * act[l]).colwise() + layers[l].b;
            act[l + 1] = pre[l].unaryExpr([this](double v) { return activation(act_, v); });
        }
        const Eigen::MatrixXd out = (layers.back().w * act[n_layers - 1]).colwise() + layers.back().b;
        const Eigen::MatrixXd r = out - y_;
        double reg = 0.0;
        for (const auto& l : layers) reg += l.w.squaredNorm();
        *cost = gamma_ * r.squaredNorm() + (1.0 - gamma_) * reg;
        if (!std::isfinite(*cost)) return false;
        if (gradient == nullptr) return true;

        std::vector<Layer> grad(n_layers);
        Eigen::MatrixXd delta = 2.0 * gamma_ * r;
        for (std::size_t l = n_layers; l-- > 0;) {
            grad[l].w = delta * act[l].transpose() + 2.0 * (1.0 - gamma_) * layers[l].w;
            grad[l].b = delta.rowwise().sum();
            if (l == 0) break;
            const Eigen::MatrixXd d1 = pre[l - 1].unaryExpr([this](double v) { return activation_d1(act_, v); });
            delta = (layers[l].w.transpose() * delta).cwiseProduct(d1);
        }
        const auto flat = pack(grad);
        std::copy(flat.begin(), flat.end(), gradient);
        return std::all_of(flat.begin(), flat.end(), [](double v) { return std::isfinite(v); });
    }

  private:
    std::vector<Eigen::Index> widths_;
    Activation act_;
    double gamma_;
    Eigen::MatrixXd u_;
    Eigen::MatrixXd y_;
};

class BestIterate : public ceres::IterationCallback {
  public:
    BestIterate(const MlpLoss& loss, const std::vector<double>& params, Activation act, const Eigen::MatrixXd* val_u,
                const Eigen::MatrixXd* val_y)
        : loss_(loss), params_(params), act_(act), val_u_(val_u), val_y_(val_y) {}

    ceres::CallbackReturnType operator()(const ceres::IterationSummary& s) override {
        costs.push_back(s.cost);
        consider(s.cost, s.iteration);
        return ceres::SOLVER_CONTINUE;
    }

    // Scores the current parameters; the solver does not report its last iterate.
    void consider(double cost, int iteration) {
        double score = cost;
        if (val_u_ != nullptr) {
            const auto layers = loss_.unpack(params_.data());
            Eigen::MatrixXd h = *val_u_;
            for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
                h = ((layers[l].w * h).colwise() + layers[l].b).unaryExpr([this](double v) { return activation(act_, v); });
            }
            const Eigen::MatrixXd out = (layers.back().w * h).colwise() + layers.back().b;
            score = (out - *val_y_).squaredNorm() / static_cast<double>(val_y_->size());
        }
        if (std::isfinite(score) && score < best_score) {
            best_score = score;
            best = params_;
            best_iteration = iteration;
        }
    }

    std::vector<double> best;
    double best_score = std::numeric_limits<double>::infinity();
    int best_iteration = 0;
    std::vector<double> costs;

  private:
    const MlpLoss& loss_;
    const std::vector<double>& params_;
    Activation act_;
    const Eigen::MatrixXd* val_u_;
    const Eigen::MatrixXd* val_y_;
};

}  // namespace

SurrogateModel train_elastic_net(const dataset::TrainingDataset& data, const TrainingConfig& config) {
    config.validate();
    if (data.n_train < 2) throw dataset::DegenerateDataset("training split is too small");
    const Eigen::MatrixXd x = data.train_features();
    const Eigen::MatrixXd t = data.train_targets();
    require_finite(x, "features");
    require_finite(t, "targets");
    Eigen::MatrixXd u = data.feature_norm.apply(x);
    Eigen::MatrixXd y = data.target_norm.apply(t);
    const Eigen::RowVectorXd u_mean = u.colwise().mean();
    const Eigen::RowVectorXd y_mean = y.colwise().mean();
    u.rowwise() -= u_mean;
    y.rowwise() -= y_mean;

    Eigen::MatrixXd beta(y.cols(), u.cols());
    Eigen::VectorXd intercept(y.cols());
    nlohmann::json fits = nlohmann::json::array();
    for (Eigen::Index l = 0; l < y.cols(); ++l) {
        int sweeps = 0;
        double gap = 0.0;
        const Eigen::VectorXd b =
            coordinate_descent(u, y.col(l), config.gamma1, config.gamma2, config.gap_tolerance, config.max_iterations, sweeps, gap);
        beta.row(l) = b.transpose();
        intercept[l] = y_mean[l] - u_mean.dot(b);
        fits.push_back({{"sweeps", sweeps}, {"duality_gap", gap}, {"nonzero", (b.array() != 0.0).count()}});
    }
    auto m = shell(data, Family::elastic_net, Activation::sigmoid);
    m.layers = {Layer{beta, intercept}};
    m.training = {{"config", config.to_json()}, {"fits", fits}};
    m.validate();
    return m;
}

SurrogateModel train_mlp(const dataset::TrainingDataset& data, const TrainingConfig& config) {
    config.validate();
    if (config.family == Family::elastic_net) throw std::invalid_argument("elastic-net config passed to MLP training");
    const auto n_val = static_cast<Eigen::Index>(std::floor(config.validation_fraction * static_cast<double>(data.n_train)));
    const auto n_fit = static_cast<Eigen::Index>(data.n_train) - n_val;
    if (n_fit < 2) throw dataset::DegenerateDataset("training split is too small");
    const Eigen::MatrixXd x = data.train_features();
    const Eigen::MatrixXd t = data.train_targets();
    require_finite(x, "features");
    require_finite(t, "targets");
    const Eigen::MatrixXd u = data.feature_norm.apply(x).transpose();
    const Eigen::MatrixXd y = data.target_norm.apply(t).transpose();

    std::vector<Eigen::Index> widths{u.rows()};
    for (int h : config.hidden) widths.push_back(h);
    widths.push_back(y.rows());

    // Uniform in +-1/sqrt(fan-in), zero biases.
    std::mt19937_64 rng(config.seed);
    std::vector<Layer> init;
    for (std::size_t l = 1; l < widths.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l - 1]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Layer layer{Eigen::MatrixXd(widths[l], widths[l - 1]), Eigen::VectorXd::Zero(widths[l])};
        for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = dist(rng);
        }
        init.push_back(std::move(layer));
    }
    std::vector<double> params = MlpLoss::pack(init);

    auto* loss = new MlpLoss(widths, config.activation, config.gamma, u.leftCols(n_fit), y.leftCols(n_fit));
    ceres::GradientProblem problem(loss);
    const Eigen::MatrixXd val_u = u.rightCols(n_val);
    const Eigen::MatrixXd val_y = y.rightCols(n_val);
    BestIterate tracker(*loss, params, config.activation, n_val > 0 ? &val_u : nullptr, n_val > 0 ? &val_y : nullptr);

    ceres::GradientProblemSolver::Options options;
    options.line_search_direction_type = config.family == Family::slnn ? ceres::BFGS : ceres::LBFGS;
    options.max_num_iterations = config.max_iterations;
    options.gradient_tolerance = config.gradient_tolerance;
    options.function_tolerance = 1e-14;
    options.parameter_tolerance = 1e-14;
    options.logging_type = ceres::SILENT;
    options.update_state_every_iteration = true;
    options.callbacks.push_back(&tracker);
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(options, problem, params.data(), &summary);
    if (std::isfinite(summary.final_cost) && (tracker.costs.empty() || summary.final_cost < tracker.costs.back())) {
        tracker.costs.push_back(summary.final_cost);
        tracker.consider(summary.final_cost, static_cast<int>(summary.iterations.size()));
    }

    auto m = shell(data, config.family, config.activation);
    m.layers = loss->unpack(tracker.best.empty() ? params.data() : tracker.best.data());
    m.training = {{"config", config.to_json()},
                  {"iterations", summary.iterations.size()},
                  {"initial_loss", summary.initial_cost},
                  {"final_loss", summary.final_cost},
                  {"best_iteration", tracker.best_iteration},
                  {"validation_mse", tracker.best_score},
                  {"validation_rows", n_val},
                  {"termination", summary.message},
                  {"loss_history", tracker.costs}};
    m.validate();
    if (summary.termination_type == ceres::FAILURE || !std::isfinite(summary.final_cost)) {
        throw TrainingDiverged("training diverged: " + summary.message, m);
    }
    return m;
}

SurrogateModel train(const dataset::TrainingDataset& data, const TrainingConfig& config) {
    return config.family == Family::elastic_net ? train_elastic_net(data, config) : train_mlp(data, config);
}

double mse(const SurrogateModel& model, const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets) {
    if (features.rows() == 0) throw std::invalid_argument("no rows to score");
    const Eigen::MatrixXd pred = model.predict_rows(features);
    return (pred - targets).squaredNorm() / static_cast<double>(targets.size());
}

}  // namespace tcop::surrogate
