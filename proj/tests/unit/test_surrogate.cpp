#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"

#include "support/surrogate_oracle.hpp"

#include "tcop/surrogate/surrogate.hpp"

using namespace tcop;
using surrogate::Activation;
using surrogate::Family;

using namespace tcop::testing;
namespace {


// Scalar-loop forward pass, written independently of the Eigen version.
std::vector<double> reference_predict(const surrogate::SurrogateModel& m, const std::vector<double>& x) {
    std::vector<double> h(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        h[i] = (x[i] - m.input_norm.mean[static_cast<Eigen::Index>(i)]) / m.input_norm.scale[static_cast<Eigen::Index>(i)];
    }
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& w = m.layers[l].w;
        std::vector<double> next(static_cast<std::size_t>(w.rows()));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            double s = m.layers[l].b[r];
            for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * h[static_cast<std::size_t>(c)];
            if (l + 1 < m.layers.size()) {
                s = m.activation == Activation::sigmoid ? 2.0 / (1.0 + std::exp(-2.0 * s)) - 1.0 : std::log(1.0 + std::exp(s));
            }
            next[static_cast<std::size_t>(r)] = s;
        }
        h = std::move(next);
    }
    for (std::size_t k = 0; k < h.size(); ++k) {
        h[k] = h[k] * m.output_norm.scale[static_cast<Eigen::Index>(k)] + m.output_norm.mean[static_cast<Eigen::Index>(k)];
    }
    return h;
}

// Rows are samples of y = x for a single feature.
dataset::TrainingDataset synthetic(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t n_train) {
    dataset::TrainingDataset d;
    d.features = x;
    d.targets = y;
    d.n_train = n_train;
    for (Eigen::Index j = 0; j < x.cols(); ++j) d.feature_names.push_back("x" + std::to_string(j));
    for (Eigen::Index j = 0; j < y.cols(); ++j) d.target_names.push_back("y" + std::to_string(j));
    d.feature_norm = dataset::Normalization::fit(d.train_features());
    d.target_norm = dataset::Normalization::fit(d.train_targets());
    return d;
}

}  // namespace

TEST_CASE("activation values at the origin") {
    CHECK(surrogate::activation(Activation::sigmoid, 0.0) == 0.0);
    CHECK(surrogate::activation_d1(Activation::sigmoid, 0.0) == 1.0);
    CHECK(surrogate::activation_d2(Activation::sigmoid, 0.0) == 0.0);
    CHECK(surrogate::activation(Activation::softplus, 0.0) == doctest::Approx(0.693147180559945).epsilon(1e-14));
    CHECK(surrogate::activation_d1(Activation::softplus, 0.0) == 0.5);
    CHECK(surrogate::activation_d2(Activation::softplus, 0.0) == 0.25);
}

TEST_CASE("activation derivatives against finite differences") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    const double h = 1e-5;
    for (auto act : {Activation::sigmoid, Activation::softplus}) {
        for (int k = 0; k < 50; ++k) {
            const double x = u(rng);
            const double fd1 = (surrogate::activation(act, x + h) - surrogate::activation(act, x - h)) / (2 * h);
            const double fd2 = (surrogate::activation_d1(act, x + h) - surrogate::activation_d1(act, x - h)) / (2 * h);
            CHECK(std::abs(surrogate::activation_d1(act, x) - fd1) <= 1e-8 * std::max(1.0, std::abs(fd1)));
            CHECK(std::abs(surrogate::activation_d2(act, x) - fd2) <= 1e-8 * std::max(1.0, std::abs(fd2)));
        }
        for (double x : {-700.0, 700.0}) {
            CHECK(std::isfinite(surrogate::activation(act, x)));
            CHECK(std::isfinite(surrogate::activation_d1(act, x)));
            CHECK(std::isfinite(surrogate::activation_d2(act, x)));
        }
    }
    // tanh form: the derivative formula matches 1 - S^2.
    for (double x : {-1.3, 0.2, 2.5}) {
        const double s = surrogate::activation(Activation::sigmoid, x);
        CHECK(surrogate::activation_d1(Activation::sigmoid, x) == doctest::Approx(1 - s * s).epsilon(1e-14));
    }
}

TEST_CASE("odd activation cancels in a hand-built 1-2-1 network") {
    surrogate::SurrogateModel m;
    m.family = Family::slnn;
    m.layers = {{Eigen::MatrixXd{{1.0}, {-1.0}}, Eigen::VectorXd::Zero(2)}, {Eigen::MatrixXd{{1.0, 1.0}}, Eigen::VectorXd::Zero(1)}};
    m = identity_norm(m);
    for (double x : {-3.0, -0.4, 0.0, 0.7, 12.0}) {
        CHECK(std::abs(m.predict(Eigen::VectorXd::Constant(1, x))[0]) < 1e-15);
    }
}

TEST_CASE("single chain-rule step in a 1-1-1 network") {
    surrogate::SurrogateModel m;
    m.family = Family::slnn;
    m.layers = {{Eigen::MatrixXd{{1.0}}, Eigen::VectorXd::Zero(1)}, {Eigen::MatrixXd{{2.0}}, Eigen::VectorXd::Zero(1)}};
    m = identity_norm(m);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    CHECK(m.jacobian(zero)(0, 0) == 2.0);
    CHECK(m.hessian(zero, 0)(0, 0) == 0.0);
}

TEST_CASE("elastic-net model is affine with constant derivatives") {
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd beta = uniform(rng, 2, 6, -1, 1);
    const Eigen::VectorXd b0 = uniform(rng, 2, 1, -1, 1);
    const auto m = surrogate::linear_model(beta, b0);
    for (int k = 0; k < 5; ++k) {
        const Eigen::VectorXd x = uniform(rng, 6, 1, -3, 3);
        CHECK((m.predict(x) - (beta * x + b0)).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(m.jacobian(x) == beta);
        CHECK(m.hessian(x, 1).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("forward pass agrees with a scalar re-implementation") {
    std::mt19937_64 rng(11);
    for (auto act : {Activation::sigmoid, Activation::softplus}) {
        const auto m = random_model(rng, Family::dlnn, {7, 5, 3}, act, 9, 3);
        for (int k = 0; k < 10; ++k) {
            const Eigen::VectorXd x = uniform(rng, 9, 1, -3, 3);
            const auto ref = reference_predict(m, std::vector<double>(x.data(), x.data() + x.size()));
            const auto y = m.predict(x);
            for (std::size_t i = 0; i < ref.size(); ++i) {
                CHECK(y[static_cast<Eigen::Index>(i)] == doctest::Approx(ref[i]).epsilon(1e-12));
            }
        }
        Eigen::MatrixXd rows = uniform(rng, 4, 9, -3, 3);
        const auto batch = m.predict_rows(rows);
        for (Eigen::Index r = 0; r < 4; ++r) {
            CHECK((batch.row(r).transpose() - m.predict(rows.row(r).transpose())).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("de-normalization is applied to the raw network output") {
    std::mt19937_64 rng(12);
    const auto m = random_model(rng, Family::slnn, {6}, Activation::sigmoid, 5, 2);
    const Eigen::VectorXd x = uniform(rng, 5, 1, -2, 2);
    const Eigen::VectorXd z = (x - m.input_norm.mean).cwiseQuotient(m.input_norm.scale);
    const Eigen::VectorXd raw = surrogate::forward(m.layers, m.activation, z);
    const Eigen::VectorXd manual = raw.cwiseProduct(m.output_norm.scale) + m.output_norm.mean;
    CHECK((m.predict(x) - manual).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("analytic derivatives match finite differences for all families") {
    std::mt19937_64 rng(2024);
    struct Arch {
        Family family;
        std::vector<Eigen::Index> hidden;
        Activation act;
    };
    const std::vector<Arch> archs = {{Family::elastic_net, {}, Activation::sigmoid},
                                     {Family::slnn, {10}, Activation::sigmoid},
                                     {Family::slnn, {8}, Activation::softplus},
                                     {Family::dlnn, {12, 6}, Activation::sigmoid},
                                     {Family::dlnn, {10, 8, 5}, Activation::sigmoid},
                                     {Family::dlnn, {8, 6, 5, 4, 2}, Activation::softplus}};
    double worst_j = 0.0, worst_h = 0.0, worst_sym = 0.0;
    int trials = 0;
    for (int k = 0; k < 120; ++k) {
        const auto& a = archs[static_cast<std::size_t>(k) % archs.size()];
        const auto m = random_model(rng, a.family, a.hidden, a.act, 7, 3);
        const Eigen::VectorXd x = m.input_norm.mean + uniform(rng, 7, 1, -2.5, 2.5);
        worst_j = std::max(worst_j, rel_max(m.jacobian(x), fd_jacobian(m, x, 1e-5)));
        for (std::size_t out = 0; out < m.outputs(); ++out) {
            const auto h = m.hessian(x, out);
            worst_sym = std::max(worst_sym, (h - h.transpose()).cwiseAbs().maxCoeff());
            if (a.family != Family::elastic_net) worst_h = std::max(worst_h, rel_max(h, fd_hessian(m, x, out, 1e-5)));
        }
        ++trials;
    }
    CHECK(trials >= 100);
    CHECK(worst_j <= 1e-6);
    CHECK(worst_h <= 1e-5);
    CHECK(worst_sym == 0.0);
    MESSAGE("jacobian " << worst_j << ", hessian " << worst_h);
}

TEST_CASE("deep formulas with one hidden layer reproduce the single-layer formulas exactly") {
    std::mt19937_64 rng(99);
    for (auto act : {Activation::sigmoid, Activation::softplus}) {
        for (int k = 0; k < 20; ++k) {
            const auto m = random_model(rng, Family::slnn, {10}, act, 15, 4);
            const Eigen::VectorXd z = uniform(rng, 15, 1, -2, 2);
            CHECK((surrogate::dlnn_jacobian(m.layers, act, z) - surrogate::slnn_jacobian(m.layers, act, z)).cwiseAbs().maxCoeff() == 0.0);
            for (std::size_t out = 0; out < 4; ++out) {
                const auto a = surrogate::dlnn_hessian(m.layers, act, z, out);
                const auto b = surrogate::slnn_hessian(m.layers, act, z, out);
                CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
            }
        }
    }
}

TEST_CASE("model file round trip is bit-exact") {
    std::mt19937_64 rng(8);
    auto m = random_model(rng, Family::dlnn, {6, 4}, Activation::softplus, 5, 2);
    m.feature_names = {"a", "b", "c", "d", "e"};
    m.target_names = {"T1", "T2"};
    m.layout_hash = "abc";
    const auto path = std::filesystem::temp_directory_path() / "tcop_model_test.json";
    m.save(path);
    const auto back = surrogate::SurrogateModel::load(path);
    std::filesystem::remove(path);
    REQUIRE(back.layers.size() == m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        CHECK(back.layers[l].w == m.layers[l].w);
        CHECK(back.layers[l].b == m.layers[l].b);
    }
    CHECK(back.input_norm.scale == m.input_norm.scale);
    CHECK(back.output_norm.mean == m.output_norm.mean);
    CHECK(back.activation == Activation::softplus);
    const Eigen::VectorXd x = uniform(rng, 5, 1, -1, 1);
    CHECK(back.predict(x) == m.predict(x));
}

TEST_CASE("dimension and layout checks") {
    std::mt19937_64 rng(4);
    auto m = random_model(rng, Family::slnn, {3}, Activation::sigmoid, 4, 1);
    m.layout_hash = "L1";
    CHECK_THROWS_AS(m.predict(Eigen::VectorXd::Zero(5)), surrogate::ModelMismatch);
    CHECK_THROWS_AS(m.check_layout("L2", 4), surrogate::ModelMismatch);
    CHECK_NOTHROW(m.check_layout("L1", 4));
    auto bad = m;
    bad.family = Family::dlnn;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("elastic net without penalties is least squares") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::MatrixXd x(200, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
    const Eigen::VectorXd truth{{1.5, -2.0, 0.3, 0.0, 0.8}};
    Eigen::MatrixXd y(200, 1);
    for (Eigen::Index i = 0; i < 200; ++i) y(i, 0) = 3.0 + x.row(i).dot(truth) + 0.1 * n01(rng);
    const auto d = synthetic(x, y, 200);
    auto cfg = surrogate::preset("en");
    cfg.gamma1 = cfg.gamma2 = 0.0;
    cfg.gap_tolerance = 1e-20;
    cfg.max_iterations = 10000;
    const auto m = surrogate::train_elastic_net(d, cfg);

    Eigen::MatrixXd a(200, 6);
    a << Eigen::VectorXd::Ones(200), x;
    const Eigen::VectorXd ols = (a.transpose() * a).ldlt().solve(a.transpose() * y.col(0));
    const Eigen::VectorXd grad = m.jacobian(Eigen::VectorXd::Zero(5)).row(0).transpose();
    CHECK((grad - ols.tail(5)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(m.predict(Eigen::VectorXd::Zero(5))[0] - ols[0]) < 1e-8);

    cfg.gamma1 = 1e9;
    const auto zero = surrogate::train_elastic_net(d, cfg);
    CHECK(zero.layers[0].w.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("elastic net recovers a sparse support") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::MatrixXd x(300, 20);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
    Eigen::VectorXd truth = Eigen::VectorXd::Zero(20);
    truth[2] = 2.0;
    truth[7] = -1.5;
    truth[15] = 1.0;
    Eigen::MatrixXd y(300, 1);
    for (Eigen::Index i = 0; i < 300; ++i) y(i, 0) = x.row(i).dot(truth) + 0.05 * n01(rng);
    auto cfg = surrogate::preset("en");
    cfg.gamma1 = 30.0;
    cfg.gamma2 = 0.5;
    const auto m = surrogate::train_elastic_net(synthetic(x, y, 300), cfg);
    const Eigen::VectorXd beta = m.layers[0].w.row(0).transpose();
    for (Eigen::Index j = 0; j < 20; ++j) CHECK((beta[j] != 0.0) == (truth[j] != 0.0));
}

TEST_CASE("a single hidden unit learns the identity") {
    Eigen::MatrixXd x(120, 1), y(120, 1);
    for (Eigen::Index i = 0; i < 120; ++i) {
        x(i, 0) = -1.0 + 2.0 * static_cast<double>((i * 37) % 120) / 119.0;
        y(i, 0) = x(i, 0);
    }
    const auto d = synthetic(x, y, 100);
    auto cfg = surrogate::preset("slnn");
    cfg.hidden = {1};
    cfg.gamma = 1.0 - 1e-7;
    const auto m = surrogate::train_mlp(d, cfg);
    CHECK(surrogate::mse(m, d.test_features(), d.test_targets()) < 1e-4);
    // Accepted steps never increase the loss.
    const auto history = m.training.at("loss_history").get<std::vector<double>>();
    REQUIRE(history.size() > 2);
    for (std::size_t k = 1; k < history.size(); ++k) CHECK(history[k] <= history[k - 1] * (1 + 1e-12));
}

TEST_CASE("pure weight decay shrinks the weights") {
    std::mt19937_64 rng(41);
    const Eigen::MatrixXd x = uniform(rng, 60, 3, -1, 1);
    Eigen::MatrixXd y(60, 1);
    for (Eigen::Index i = 0; i < 60; ++i) y(i, 0) = std::sin(x(i, 0)) + x(i, 1) * x(i, 2);
    const auto d = synthetic(x, y, 50);
    auto cfg = surrogate::preset("dl2");
    cfg.hidden = {5, 4};
    cfg.validation_fraction = 0.0;
    cfg.gamma = 0.0;
    const auto m = surrogate::train_mlp(d, cfg);
    for (const auto& l : m.layers) CHECK(l.w.cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("presets and training config") {
    CHECK(surrogate::preset("en").family == Family::elastic_net);
    CHECK(surrogate::preset("slnn").hidden == std::vector<int>{10});
    CHECK(surrogate::preset("dl3").hidden == std::vector<int>{80, 40, 20});
    CHECK(surrogate::preset("dl5").activation == Activation::softplus);
    CHECK(surrogate::preset("dl5").hidden.size() == 5);
    CHECK_THROWS_AS(surrogate::preset("dl9"), std::invalid_argument);
    auto cfg = surrogate::preset("dl2");
    CHECK(surrogate::TrainingConfig::from_json(cfg.to_json()).hidden == cfg.hidden);
    cfg.gamma = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = surrogate::preset("slnn");
    cfg.hidden = {4, 4};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("non-finite training features are rejected") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 2);
    Eigen::MatrixXd y = Eigen::MatrixXd::Random(20, 1);
    auto d = synthetic(x, y, 15);
    d.features(3, 1) = std::nan("");
    CHECK_THROWS_AS(surrogate::train_elastic_net(d, surrogate::preset("en")), std::invalid_argument);
    CHECK_THROWS_AS(surrogate::train_mlp(d, surrogate::preset("slnn")), std::invalid_argument);
}
