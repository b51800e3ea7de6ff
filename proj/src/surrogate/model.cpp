#include <cmath>
#include <fstream>

#include "tcop/surrogate/surrogate.hpp"

namespace tcop::surrogate {

double activation(Activation kind, double x) {
    if (kind == Activation::sigmoid) return std::tanh(x);
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double activation_d1(Activation kind, double x) {
    if (kind == Activation::sigmoid) {
        const double e = std::exp(-2.0 * std::abs(x));
        return 4.0 * e / ((1.0 + e) * (1.0 + e));
    }
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double activation_d2(Activation kind, double x) {
    const double d1 = activation_d1(kind, x);
    if (kind == Activation::sigmoid) return -2.0 * activation(kind, x) * d1;
    return d1 * activation_d1(kind, -x);
}

std::string to_string(Activation kind) { return kind == Activation::sigmoid ? "sigmoid" : "softplus"; }

Activation activation_from_string(const std::string& s) {
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "softplus") return Activation::softplus;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string to_string(Family f) {
    switch (f) {
        case Family::elastic_net: return "en";
        case Family::slnn: return "slnn";
        case Family::dlnn: return "dlnn";
    }
    return "";
}

Family family_from_string(const std::string& s) {
    if (s == "en") return Family::elastic_net;
    if (s == "slnn") return Family::slnn;
    if (s == "dlnn") return Family::dlnn;
    throw std::invalid_argument("unknown model family '" + s + "'");
}

namespace {

Eigen::VectorXd apply(Activation act, const Eigen::VectorXd& a, double (*f)(Activation, double)) {
    Eigen::VectorXd out(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) out[i] = f(act, a[i]);
    return out;
}

Eigen::MatrixXd symmetric(const Eigen::MatrixXd& h) { return 0.5 * (h + h.transpose()); }

// A^T diag(coef) A: contribution of one hidden layer whose pre-activation
// Jacobian is A.
Eigen::MatrixXd layer_term(const Eigen::MatrixXd& a, const Eigen::VectorXd& coef) {
    return a.transpose() * (coef.asDiagonal() * a);
}

void require_hidden(const std::vector<Layer>& layers, std::size_t at_least) {
    if (layers.size() < at_least + 1) throw std::invalid_argument("network has too few hidden layers");
}

}  // namespace

Eigen::VectorXd forward(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z) {
    Eigen::VectorXd h = z;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const Eigen::VectorXd a = layers[l].w * h + layers[l].b;
        h = apply(act, a, activation);
    }
    return layers.back().w * h + layers.back().b;
}

Eigen::MatrixXd slnn_jacobian(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z) {
    require_hidden(layers, 1);
    const auto& w1 = layers[0].w;
    const auto& w2 = layers[1].w;
    const Eigen::VectorXd a = w1 * z + layers[0].b;
    const Eigen::VectorXd d1 = apply(act, a, activation_d1);
    const Eigen::MatrixXd q = d1.asDiagonal() * w1;
    return w2 * q;
}

Eigen::MatrixXd slnn_hessian(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z,
                             std::size_t output) {
    require_hidden(layers, 1);
    const auto& w1 = layers[0].w;
    const auto& w2 = layers[1].w;
    const Eigen::VectorXd a = w1 * z + layers[0].b;
    const Eigen::VectorXd d2 = apply(act, a, activation_d2);
    const Eigen::VectorXd coef = w2.row(static_cast<Eigen::Index>(output)).transpose().cwiseProduct(d2);
    return symmetric(layer_term(w1, coef));
}

Eigen::MatrixXd dlnn_jacobian(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z) {
    require_hidden(layers, 1);
    Eigen::VectorXd h = z;
    Eigen::MatrixXd p;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const Eigen::VectorXd a = layers[l].w * h + layers[l].b;
        const Eigen::VectorXd d1 = apply(act, a, activation_d1);
        const Eigen::MatrixXd q = d1.asDiagonal() * layers[l].w;
        p = l == 0 ? q : Eigen::MatrixXd(q * p);
        h = apply(act, a, activation);
    }
    return layers.back().w * p;
}

Eigen::MatrixXd dlnn_hessian(const std::vector<Layer>& layers, Activation act, const Eigen::VectorXd& z,
                             std::size_t output) {
    require_hidden(layers, 1);
    const std::size_t hidden = layers.size() - 1;
    // Forward: pre-activation Jacobians A_l = w_l P_{l-1} and the activation derivatives.
    std::vector<Eigen::MatrixXd> pre(hidden);
    std::vector<Eigen::VectorXd> d1(hidden), d2(hidden);
    Eigen::VectorXd h = z;
    Eigen::MatrixXd p;
    for (std::size_t l = 0; l < hidden; ++l) {
        const Eigen::VectorXd a = layers[l].w * h + layers[l].b;
        d1[l] = apply(act, a, activation_d1);
        d2[l] = apply(act, a, activation_d2);
        pre[l] = l == 0 ? layers[l].w : Eigen::MatrixXd(layers[l].w * p);
        p = d1[l].asDiagonal() * pre[l];
        h = apply(act, a, activation);
    }
    // Backward: g = d output / d h_l, one layer term per hidden layer.
    Eigen::VectorXd g = layers.back().w.row(static_cast<Eigen::Index>(output)).transpose();
    const auto n = static_cast<Eigen::Index>(z.size());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = hidden; k-- > 0;) {
        const Eigen::VectorXd coef = g.cwiseProduct(d2[k]);
        out += layer_term(pre[k], coef);
        if (k > 0) g = layers[k].w.transpose() * g.cwiseProduct(d1[k]);
    }
    return symmetric(out);
}

// ---------------------------------------------------------------------------

void SurrogateModel::validate() const {
    if (layers.empty()) throw std::invalid_argument("model has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].w.rows() != layers[l].b.size()) throw std::invalid_argument("layer bias does not match weights");
        if (l > 0 && layers[l].w.cols() != layers[l - 1].w.rows()) {
            throw std::invalid_argument("layer dimensions do not chain");
        }
    }
    const auto hidden = hidden_layers();
    if ((family == Family::elastic_net) != (hidden == 0) || (family == Family::slnn && hidden != 1) ||
        (family == Family::dlnn && hidden < 2)) {
        throw std::invalid_argument("layer count does not match the model family");
    }
    if (input_norm.mean.size() != static_cast<Eigen::Index>(inputs()) ||
        input_norm.scale.size() != input_norm.mean.size()) {
        throw std::invalid_argument("input normalization does not match the model");
    }
    if (output_norm.mean.size() != static_cast<Eigen::Index>(outputs()) ||
        output_norm.scale.size() != output_norm.mean.size()) {
        throw std::invalid_argument("output normalization does not match the model");
    }
    if (!feature_names.empty() && feature_names.size() != inputs()) {
        throw std::invalid_argument("feature names do not match the model");
    }
    if (!target_names.empty() && target_names.size() != outputs()) {
        throw std::invalid_argument("target names do not match the model");
    }
}

std::size_t SurrogateModel::inputs() const { return static_cast<std::size_t>(layers.front().w.cols()); }
std::size_t SurrogateModel::outputs() const { return static_cast<std::size_t>(layers.back().w.rows()); }

void SurrogateModel::check_layout(const std::string& hash, std::size_t dimension) const {
    if (dimension != inputs()) {
        throw ModelMismatch("model expects " + std::to_string(inputs()) + " features, got " + std::to_string(dimension));
    }
    if (!layout_hash.empty() && !hash.empty() && hash != layout_hash) {
        throw ModelMismatch("model was trained on a different feature layout");
    }
}

Eigen::VectorXd SurrogateModel::normalize(const Eigen::VectorXd& x) const {
    if (x.size() != static_cast<Eigen::Index>(inputs())) {
        throw ModelMismatch("model expects " + std::to_string(inputs()) + " features, got " + std::to_string(x.size()));
    }
    return (x - input_norm.mean).cwiseQuotient(input_norm.scale);
}

Eigen::VectorXd SurrogateModel::predict(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd y = forward(layers, activation, normalize(x));
    return y.cwiseProduct(output_norm.scale) + output_norm.mean;
}

Eigen::MatrixXd SurrogateModel::predict_rows(const Eigen::MatrixXd& rows) const {
    if (rows.cols() != static_cast<Eigen::Index>(inputs())) throw ModelMismatch("feature matrix has the wrong width");
    Eigen::MatrixXd h = input_norm.apply(rows).transpose();
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        Eigen::MatrixXd a = (layers[l].w * h).colwise() + layers[l].b;
        h = a.unaryExpr([this](double v) { return surrogate::activation(activation, v); });
    }
    const Eigen::MatrixXd y = ((layers.back().w * h).colwise() + layers.back().b).transpose();
    return output_norm.invert(y);
}

Eigen::MatrixXd SurrogateModel::jacobian(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd z = normalize(x);
    Eigen::MatrixXd jn;
    switch (hidden_layers()) {
        case 0: jn = layers.front().w; break;
        case 1: jn = slnn_jacobian(layers, activation, z); break;
        default: jn = dlnn_jacobian(layers, activation, z); break;
    }
    return output_norm.scale.asDiagonal() * jn * input_norm.scale.cwiseInverse().asDiagonal();
}

Eigen::MatrixXd SurrogateModel::hessian(const Eigen::VectorXd& x, std::size_t output) const {
    if (output >= outputs()) throw std::out_of_range("model output index out of range");
    const Eigen::VectorXd z = normalize(x);
    const auto n = static_cast<Eigen::Index>(inputs());
    Eigen::MatrixXd hn;
    switch (hidden_layers()) {
        case 0: return Eigen::MatrixXd::Zero(n, n);
        case 1: hn = slnn_hessian(layers, activation, z, output); break;
        default: hn = dlnn_hessian(layers, activation, z, output); break;
    }
    const Eigen::VectorXd inv = input_norm.scale.cwiseInverse();
    const Eigen::MatrixXd h = output_norm.scale[static_cast<Eigen::Index>(output)] * (inv.asDiagonal() * hn * inv.asDiagonal());
    return symmetric(h);
}

SurrogateModel linear_model(const Eigen::MatrixXd& beta, const Eigen::VectorXd& intercept) {
    SurrogateModel m;
    m.family = Family::elastic_net;
    m.layers = {Layer{beta, intercept}};
    m.input_norm.mean = Eigen::VectorXd::Zero(beta.cols());
    m.input_norm.scale = Eigen::VectorXd::Ones(beta.cols());
    m.output_norm.mean = Eigen::VectorXd::Zero(beta.rows());
    m.output_norm.scale = Eigen::VectorXd::Ones(beta.rows());
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------

nlohmann::json SurrogateModel::to_json() const {
    nlohmann::json js_layers = nlohmann::json::array();
    for (const auto& l : layers) {
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(l.w.size()));
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) w.push_back(l.w(r, c));
        }
        js_layers.push_back({{"rows", l.w.rows()},
                             {"cols", l.w.cols()},
                             {"w", w},
                             {"b", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}});
    }
    return {{"family", to_string(family)},
            {"activation", to_string(activation)},
            {"layers", js_layers},
            {"input_norm", input_norm.to_json()},
            {"output_norm", output_norm.to_json()},
            {"features", feature_names},
            {"targets", target_names},
            {"layout_hash", layout_hash},
            {"case_hash", case_hash},
            {"training", training}};
}

SurrogateModel SurrogateModel::from_json(const nlohmann::json& j) {
    SurrogateModel m;
    m.family = family_from_string(j.at("family").get<std::string>());
    m.activation = activation_from_string(j.value("activation", std::string("sigmoid")));
    for (const auto& jl : j.at("layers")) {
        const auto rows = jl.at("rows").get<Eigen::Index>();
        const auto cols = jl.at("cols").get<Eigen::Index>();
        const auto w = jl.at("w").get<std::vector<double>>();
        const auto b = jl.at("b").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
            throw std::invalid_argument("layer arrays do not match their declared shape");
        }
        Layer l;
        l.w = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), rows, cols);
        l.b = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
        m.layers.push_back(std::move(l));
    }
    m.input_norm = dataset::Normalization::from_json(j.at("input_norm"));
    m.output_norm = dataset::Normalization::from_json(j.at("output_norm"));
    m.feature_names = j.value("features", std::vector<std::string>{});
    m.target_names = j.value("targets", std::vector<std::string>{});
    m.layout_hash = j.value("layout_hash", "");
    m.case_hash = j.value("case_hash", "");
    m.training = j.value("training", nlohmann::json::object());
    m.validate();
    return m;
}

void SurrogateModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json().dump(1) << '\n';
}

SurrogateModel SurrogateModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return from_json(nlohmann::json::parse(in));
}

}  // namespace tcop::surrogate
