#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "support/qp_oracle.hpp"

#include "tcop/ipm/ipm.hpp"

using namespace tcop;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using ipm::kInf;

using namespace tcop::testing;
namespace {


ipm::KktState random_interior_state(std::mt19937_64& rng, Index n, Index m, Index r, double mu) {
    std::uniform_real_distribution<double> u(0.05, 2.0);
    ipm::KktState s;
    s.x = gaussian(rng, n, 1);
    s.y = gaussian(rng, m, 1);
    s.l.resize(r);
    s.u.resize(r);
    s.z.resize(r);
    s.w.resize(r);
    for (Index k = 0; k < r; ++k) {
        s.l[k] = u(rng);
        s.u[k] = u(rng);
        s.z[k] = u(rng);
        s.w[k] = u(rng);
    }
    s.mu = mu;
    return s;
}

// Unreduced Newton system in (dx, dy, dl, du, dz, dw), all sides finite.
ipm::Step full_kkt_step(const Qp& p, const ipm::KktState& s) {
    const Index n = p.c.size(), m = p.a.rows(), r = p.g.rows();
    const Index dim = n + m + 4 * r;
    const Index ox = 0, oy = n, ol = n + m, ou = ol + r, oz = ou + r, ow = oz + r;
    MatrixXd k = MatrixXd::Zero(dim, dim);
    VectorXd rhs = VectorXd::Zero(dim);
    const VectorXd gx = p.g * s.x;
    // stationarity: Q dx - A'dy - G'dz + G'dw = -(Qx + c - A'y - G'(z - w))
    k.block(ox, ox, n, n) = p.q;
    k.block(ox, oy, n, m) = -p.a.transpose();
    k.block(ox, oz, n, r) = -p.g.transpose();
    k.block(ox, ow, n, r) = p.g.transpose();
    rhs.segment(ox, n) = -(p.q * s.x + p.c - p.a.transpose() * s.y - p.g.transpose() * (s.z - s.w));
    k.block(oy, ox, m, n) = p.a;
    rhs.segment(oy, m) = -(p.a * s.x - p.b);
    for (Index j = 0; j < r; ++j) {
        k.block(ol + j, ox, 1, n) = p.g.row(j);
        k(ol + j, ol + j) = -1.0;
        rhs[ol + j] = -(gx[j] - s.l[j] - p.lo[j]);
        k.block(ou + j, ox, 1, n) = p.g.row(j);
        k(ou + j, ou + j) = 1.0;
        rhs[ou + j] = -(gx[j] + s.u[j] - p.hi[j]);
        k(oz + j, ol + j) = s.z[j];
        k(oz + j, oz + j) = s.l[j];
        rhs[oz + j] = s.mu - s.l[j] * s.z[j];
        k(ow + j, ou + j) = s.w[j];
        k(ow + j, ow + j) = s.u[j];
        rhs[ow + j] = s.mu - s.u[j] * s.w[j];
    }
    const VectorXd sol = k.fullPivLu().solve(rhs);
    ipm::Step st;
    st.dx = sol.segment(ox, n);
    st.dy = sol.segment(oy, m);
    st.dl = sol.segment(ol, r);
    st.du = sol.segment(ou, r);
    st.dz = sol.segment(oz, r);
    st.dw = sol.segment(ow, r);
    return st;
}

ipm::FunctionProblem one_variable_lower_bound() {
    ipm::FunctionProblem p;
    p.n = 1;
    p.r = 1;
    p.lower = VectorXd::Constant(1, 1.0);
    p.upper = VectorXd::Constant(1, kInf);
    p.f = [](const VectorXd& x) { return x[0] * x[0]; };
    p.df = [](const VectorXd& x) -> VectorXd { return 2.0 * x; };
    p.g = [](const VectorXd& x) -> VectorXd { return x; };
    p.dg = [](const VectorXd&) {
        ipm::SparseMatrix j(1, 1);
        j.insert(0, 0) = 1.0;
        return j;
    };
    p.hess = [](const VectorXd&, const VectorXd&, const VectorXd&) {
        ipm::SparseMatrix h(1, 1);
        h.insert(0, 0) = 2.0;
        return h;
    };
    return p;
}

}  // namespace

TEST_CASE("update_barrier follows sigma * gap / sides with a floor") {
    // r = 7 two-sided inequalities have 2r slack sides.
    CHECK(ipm::update_barrier(2.0 * 7, 2 * 7, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(ipm::update_barrier(0.0, 7, 0.1) == 1e-14);
    CHECK(ipm::update_barrier(3.0, 4, 0.05) == doctest::Approx(0.5 * ipm::update_barrier(3.0, 4, 0.1)).epsilon(1e-15));
}

TEST_CASE("fraction to the boundary") {
    ipm::KktState s;
    s.l = VectorXd::Constant(1, 1.0);
    s.u = s.z = s.w = VectorXd::Ones(1);
    ipm::Step d;
    d.dl = VectorXd::Constant(1, -2.0);
    d.du = d.dz = d.dw = VectorXd::Zero(1);
    ipm::Sides sides{{true}, {true}};
    auto a = ipm::step_lengths(s, d, sides);
    CHECK(a.primal == doctest::Approx(0.49975).epsilon(1e-15));
    CHECK(a.dual == 1.0);

    d.dl[0] = 5.0;
    a = ipm::step_lengths(s, d, sides);
    CHECK(a.primal == 1.0);

    // An infinite side never blocks.
    d.dl[0] = -2.0;
    sides.lower[0] = false;
    CHECK(ipm::step_lengths(s, d, sides).primal == 1.0);
}

TEST_CASE("updated slacks and multipliers stay positive on random states") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> mag(-8.0, 2.0);
    std::normal_distribution<double> dir(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const Index r = 1 + trial % 9;
        auto s = random_interior_state(rng, 1, 0, r, 0.1);
        for (Index k = 0; k < r; ++k) {
            s.l[k] = std::pow(10.0, mag(rng));
            s.z[k] = std::pow(10.0, mag(rng));
        }
        ipm::Step d;
        d.dl = 10.0 * gaussian(rng, r, 1);
        d.du = 10.0 * gaussian(rng, r, 1);
        d.dz = 10.0 * gaussian(rng, r, 1);
        d.dw = 10.0 * gaussian(rng, r, 1);
        const ipm::Sides sides{std::vector<bool>(r, true), std::vector<bool>(r, true)};
        const auto a = ipm::step_lengths(s, d, sides);
        REQUIRE(a.primal > 0.0);
        REQUIRE(a.primal <= 1.0);
        REQUIRE(a.dual > 0.0);
        REQUIRE(a.dual <= 1.0);
        REQUIRE(((s.l + a.primal * d.dl).array() > 0.0).all());
        REQUIRE(((s.u + a.primal * d.du).array() > 0.0).all());
        REQUIRE(((s.z + a.dual * d.dz).array() > 0.0).all());
        REQUIRE(((s.w + a.dual * d.dw).array() > 0.0).all());
    }
}

TEST_CASE("one-sided bound: min x^2 with x >= 1") {
    const auto p = one_variable_lower_bound();
    const auto res = ipm::solve(p, VectorXd::Constant(1, 3.0));
    REQUIRE(res.ok());
    CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(res.z[0] == doctest::Approx(2.0).epsilon(1e-5));
    CHECK(res.w[0] == 0.0);
}

TEST_CASE("equality plus upper bound: min (x-2)^2 + (y-1)^2, x + y = 2, x <= 1") {
    Qp p;
    p.q = 2.0 * MatrixXd::Identity(2, 2);
    p.c = VectorXd(2);
    p.c << -4.0, -2.0;
    p.a = MatrixXd::Ones(1, 2);
    p.b = VectorXd::Constant(1, 2.0);
    p.g = MatrixXd(1, 2);
    p.g << 1.0, 0.0;
    p.lo = VectorXd::Constant(1, -kInf);
    p.hi = VectorXd::Constant(1, 1.0);
    const auto prob = p.problem();
    const auto res = ipm::solve(prob, VectorXd::Zero(2));
    REQUIRE(res.ok());
    CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(res.x[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(res.objective + 5.0 == doctest::Approx(1.0).epsilon(1e-6));  // constant 4 + 1 dropped from the QP form
    // x - 2 = -1 = y/2 - w/2 with y - 1 = 0 = y/2  ->  multiplier 0 on the equality, 2 on x <= 1
    CHECK(std::abs(res.y[0]) < 1e-5);
    CHECK(res.w[0] == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("Newton step vanishes at an exact perturbed-KKT point") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 6, m = 2, r = 4;
        const double mu = trial % 2 ? 1e-3 : 0.3;
        auto s = random_interior_state(rng, n, m, r, mu);
        s.z = mu * s.l.cwiseInverse();
        s.w = mu * s.u.cwiseInverse();
        Qp p;
        const MatrixXd f = gaussian(rng, n, n);
        p.q = f.transpose() * f + MatrixXd::Identity(n, n);
        p.a = gaussian(rng, m, n);
        p.b = p.a * s.x;
        p.g = gaussian(rng, r, n);
        p.lo = p.g * s.x - s.l;
        p.hi = p.g * s.x + s.u;
        p.c = -p.q * s.x + p.a.transpose() * s.y + p.g.transpose() * (s.z - s.w);
        const auto prob = p.problem();
        const auto d = ipm::newton_step(prob, s, ipm::Sides::of(prob), {});
        CHECK(d.dx.lpNorm<Eigen::Infinity>() < 1e-10);
        CHECK(d.dy.lpNorm<Eigen::Infinity>() < 1e-10);
        CHECK(d.dl.lpNorm<Eigen::Infinity>() < 1e-10);
        CHECK(d.du.lpNorm<Eigen::Infinity>() < 1e-10);
        CHECK(d.dz.lpNorm<Eigen::Infinity>() < 1e-10);
        CHECK(d.dw.lpNorm<Eigen::Infinity>() < 1e-10);
    }
}

TEST_CASE("condensed Newton step equals the unreduced KKT solution") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const Index n = 3 + trial % 8, m = trial % 3, r = 1 + trial % 6;
        Qp p = random_qp(rng, n, m, r);
        p.lo = p.g * gaussian(rng, n, 1) - VectorXd::Constant(r, 1.0);
        p.hi = p.lo + VectorXd::Constant(r, 2.0);
        const auto s = random_interior_state(rng, n, m, r, 0.05);
        const auto prob = p.problem();
        const auto d = ipm::newton_step(prob, s, ipm::Sides::of(prob), {});
        const auto e = full_kkt_step(p, s);
        CHECK(d.residual <= 1e-10);
        auto rel = [](const VectorXd& a, const VectorXd& b) {
            return a.size() ? (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>()) : 0.0;
        };
        CHECK(rel(d.dx, e.dx) < 1e-9);
        CHECK(rel(d.dy, e.dy) < 1e-9);
        CHECK(rel(d.dl, e.dl) < 1e-9);
        CHECK(rel(d.du, e.du) < 1e-9);
        CHECK(rel(d.dz, e.dz) < 1e-9);
        CHECK(rel(d.dw, e.dw) < 1e-9);
    }
}

TEST_CASE("a full Newton step on a QP zeroes the linear KKT residuals") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 8, m = 2, r = 5;
        Qp p = random_qp(rng, n, m, r);
        auto s = random_interior_state(rng, n, m, r, 0.01);
        const auto prob = p.problem();
        const auto sides = ipm::Sides::of(prob);
        const auto d = ipm::newton_step(prob, s, sides, {});
        s.x += d.dx;
        s.y += d.dy;
        s.l += d.dl;
        s.u += d.du;
        s.z += d.dz;
        s.w += d.dw;
        const auto res = ipm::residuals(prob, s, sides);
        CHECK(res.stationarity.lpNorm<Eigen::Infinity>() < 1e-9);
        CHECK(res.equality.lpNorm<Eigen::Infinity>() < 1e-9);
        CHECK(res.lower.lpNorm<Eigen::Infinity>() < 1e-9);
        CHECK(res.upper.lpNorm<Eigen::Infinity>() < 1e-9);
    }
}

TEST_CASE("random convex QPs match the active-set oracle") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(2, 20);
    ipm::IpmOptions o;
    o.gap_tolerance = 1e-10;
    o.feasibility_tolerance = 1e-10;
    o.stationarity_tolerance = 1e-10;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const Index n = dim(rng);
        const Index m = std::min<Index>(trial % 4, n - 1);
        const Index r = 1 + trial % 8;
        const Qp p = random_qp(rng, n, m, r);
        const VectorXd oracle = active_set_oracle(p);
        REQUIRE(oracle.size() == n);
        const auto prob = p.problem();
        const auto res = ipm::solve(prob, VectorXd::Zero(n), o);
        REQUIRE_MESSAGE(res.ok(), "trial ", trial, ": ", ipm::to_string(res.status));
        const double err = (res.x - oracle).lpNorm<Eigen::Infinity>();
        worst = std::max(worst, err);
        CHECK_MESSAGE(err < 1e-6, "trial ", trial, " n=", n, " m=", m, " r=", r);
        CHECK(res.gap < 10 * o.gap_tolerance);
        CHECK(res.feasibility <= 10 * o.gap_tolerance);
        CHECK(res.stationarity <= 10 * o.gap_tolerance);
        for (double g : res.gap_history) CHECK(g >= 0.0);
        CHECK(res.gap_history.back() < res.gap_history.front());
    }
    MESSAGE("worst deviation from the oracle: ", worst);
}

TEST_CASE("default tolerances meet the KKT residual bounds") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const Qp p = random_qp(rng, 10, 2, 6);
        const auto res = ipm::solve(p.problem(), VectorXd::Zero(10));
        REQUIRE(res.ok());
        CHECK(res.gap < 10 * 1e-6);
        CHECK(res.feasibility <= 10 * 1e-6);
        CHECK(res.stationarity <= 10 * 1e-6);
        CHECK((res.x - active_set_oracle(p)).lpNorm<Eigen::Infinity>() < 1e-4);
    }
}

TEST_CASE("solver statuses") {
    SUBCASE("non-finite callback") {
        auto p = one_variable_lower_bound();
        p.df = [](const VectorXd&) -> VectorXd { return VectorXd::Constant(1, std::nan("")); };
        CHECK(ipm::solve(p, VectorXd::Constant(1, 3.0)).status == ipm::Status::callback_error);
    }
    SUBCASE("iteration cap returns a finite iterate") {
        ipm::IpmOptions o;
        o.max_iterations = 2;
        const auto res = ipm::solve(one_variable_lower_bound(), VectorXd::Constant(1, 3.0), o);
        CHECK(res.status == ipm::Status::max_iterations);
        CHECK(res.x.allFinite());
        CHECK(res.iterations == 2);
    }
    SUBCASE("bad inputs") {
        auto p = one_variable_lower_bound();
        CHECK_THROWS_AS(ipm::solve(p, VectorXd::Zero(2)), std::invalid_argument);
        p.upper[0] = 1.0;
        CHECK_THROWS_AS(ipm::solve(p, VectorXd::Zero(1)), std::invalid_argument);
        ipm::IpmOptions o;
        o.sigma = 1.0;
        CHECK_THROWS_AS(ipm::solve(one_variable_lower_bound(), VectorXd::Zero(1), o), std::invalid_argument);
    }
}

TEST_CASE("nonconvex objective is handled by inertia correction") {
    // min -x^2 on [-1, 2]: the Hessian is negative definite everywhere; both ends are local minima.
    ipm::FunctionProblem p;
    p.n = 1;
    p.r = 1;
    p.lower = VectorXd::Constant(1, -1.0);
    p.upper = VectorXd::Constant(1, 2.0);
    p.f = [](const VectorXd& x) { return -x[0] * x[0]; };
    p.df = [](const VectorXd& x) -> VectorXd { return -2.0 * x; };
    p.g = [](const VectorXd& x) -> VectorXd { return x; };
    p.dg = [](const VectorXd&) {
        ipm::SparseMatrix j(1, 1);
        j.insert(0, 0) = 1.0;
        return j;
    };
    p.hess = [](const VectorXd&, const VectorXd&, const VectorXd&) {
        ipm::SparseMatrix h(1, 1);
        h.insert(0, 0) = -2.0;
        return h;
    };
    const auto res = ipm::solve(p, VectorXd::Constant(1, 0.8));
    REQUIRE(res.ok());
    CHECK(std::min(std::abs(res.x[0] - 2.0), std::abs(res.x[0] + 1.0)) < 1e-6);
}

TEST_CASE("iteration trace") {
    const auto path = std::filesystem::temp_directory_path() / "tcop_ipm_trace.csv";
    ipm::IpmOptions o;
    o.trace_path = path.string();
    const auto res = ipm::solve(one_variable_lower_bound(), VectorXd::Constant(1, 3.0), o);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == res.iterations + 2);
    std::filesystem::remove(path);
}
