#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"

#include "support/smib.hpp"

#include "tcop/dynamics/simulation.hpp"
#include "tcop/grid/case_io.hpp"

using namespace tcop;
using namespace tcop::dynamics;

using namespace tcop::testing;
namespace {


grid::NetworkCase case39() { return grid::load_case(std::string(TCOP_DATA_DIR) + "/ieee39_wind_ess.json"); }

grid::OperatingPoint case39_point(const grid::NetworkCase& c) {
    return grid::solve_power_flow(c, grid::OperatingPoint::flat_start(c)).point;
}

std::vector<ContingencySpec> case39_contingencies() {
    std::ifstream in(std::string(TCOP_DATA_DIR) + "/ieee39_wind_ess.json");
    return contingencies_from_json(nlohmann::json::parse(in));
}

}  // namespace

TEST_CASE("centre of inertia") {
    const std::vector<double> m{1.0, 3.0};
    CHECK(coi_angle(std::vector<double>{0.0, 0.4}, m) == doctest::Approx(0.3).epsilon(1e-15));
    // Shifting and scaling every angle shifts and scales the COI.
    const std::vector<double> d{0.2, -0.7};
    const double base = coi_angle(d, m);
    CHECK(coi_angle(std::vector<double>{2.0 * 0.2 + 1.0, 2.0 * -0.7 + 1.0}, m) == doctest::Approx(2.0 * base + 1.0));
    CHECK_THROWS(coi_angle(std::vector<double>{}, std::vector<double>{}));
}

TEST_CASE("stability check uses a strict bound") {
    Trajectory t;
    t.time = {0.0};
    t.inertia = {1.0, 1.0};
    t.angle = {{0.0, 2.0}};
    t.coi = {1.0};
    CHECK(check_stability(t, {.delta_max = 1.0 + 1e-12}).stable);
    CHECK_FALSE(check_stability(t, {.delta_max = 1.0}).stable);
    CHECK(check_stability(t, {}).worst_excursion == doctest::Approx(1.0));
}

TEST_CASE("no disturbance keeps the 39-bus system at equilibrium") {
    const auto c = case39();
    const auto p = case39_point(c);
    const auto traj = simulate(c, p, std::nullopt, {});
    double drift = 0.0;
    for (const auto& row : traj.angle) {
        for (std::size_t g = 0; g < row.size(); ++g) drift = std::max(drift, std::abs(row[g] - traj.angle[0][g]));
    }
    CHECK(drift <= 1e-9);
    CHECK(traj.time.back() == doctest::Approx(3.0));
    CHECK(traj.time.size() == 61);
}

TEST_CASE("SMIB critical clearing time matches the equal-area criterion") {
    const auto c = smib();
    const auto p = smib_point(c);
    const auto e = smib_emf(p);
    const double t_eac = eac_critical_time(std::abs(e), std::arg(e));
    REQUIRE(t_eac > 0.1);
    double lo = 0.01, hi = 0.6;
    REQUIRE(smib_stable(c, p, lo));
    REQUIRE_FALSE(smib_stable(c, p, hi));
    while (hi - lo > 1e-3) {
        const double mid = 0.5 * (lo + hi);
        (smib_stable(c, p, mid) ? lo : hi) = mid;
    }
    CHECK(std::abs(0.5 * (lo + hi) - t_eac) <= 0.05);
    CHECK(smib_stable(c, p, t_eac - 0.05));
    CHECK_FALSE(smib_stable(c, p, t_eac + 0.05));
}

TEST_CASE("post-fault energy is conserved without damping") {
    const auto c = smib();
    const auto p = smib_point(c);
    const auto e = smib_emf(p);
    const double m = 2.0 * kH / (2.0 * std::numbers::pi * 60.0);
    // Fault removed without tripping: the pre-fault network returns.
    const double pmax = std::abs(e) / (kXd + 0.5 * kLineX + 1e-7);
    const double ds = std::asin(kPm / pmax);
    ContingencySpec fault{.id = "F", .line_id = "A", .fault_bus = 2, .clearing_time = 0.1, .trip_line = false};
    const auto traj = simulate(c, p, fault, {.t_end = 3.0, .step = 0.01});
    auto energy = [&](std::size_t k) {
        const double d = traj.angle[k][1] - traj.angle[k][0];
        const double w = traj.speed[k][1] - traj.speed[k][0];
        return 0.5 * m * w * w - kPm * (d - ds) - pmax * (std::cos(d) - std::cos(ds));
    };
    std::size_t start = 0;
    while (traj.time[start] < 0.1 - 1e-12) ++start;
    const double w0 = energy(start);
    REQUIRE(w0 > 0.0);
    double worst = 0.0;
    for (std::size_t k = start; k < traj.time.size(); ++k) worst = std::max(worst, std::abs(energy(k) - w0));
    CHECK(worst / w0 <= 0.005);
}

TEST_CASE("halving the step barely moves the 39-bus swing") {
    const auto c = case39();
    const auto p = case39_point(c);
    const auto cont = case39_contingencies();
    REQUIRE(cont.size() == 4);
    for (const auto& k : cont) {
        const auto coarse = check_stability(simulate(c, p, k, {.step = 0.05}), {});
        const auto fine = check_stability(simulate(c, p, k, {.step = 0.025}), {});
        CHECK(std::abs(coarse.worst_excursion - fine.worst_excursion) <= 0.01 * fine.worst_excursion);
        CHECK(coarse.stable);
    }
}

TEST_CASE("stability is monotone in the angle limit") {
    const auto c = case39();
    const auto p = case39_point(c);
    const auto traj = simulate(c, p, case39_contingencies()[0], {});
    const double worst = check_stability(traj, {}).worst_excursion;
    bool seen_stable = false;
    for (double lim = 0.1; lim < 4.0; lim += 0.05) {
        const bool s = check_stability(traj, {.delta_max = lim}).stable;
        if (seen_stable) CHECK(s);
        seen_stable = seen_stable || s;
        CHECK(s == (worst < lim));
    }
}

TEST_CASE("early stop truncates unstable runs") {
    const auto c = smib();
    const auto p = smib_point(c);
    ContingencySpec fault{.id = "F", .line_id = "A", .fault_bus = 2, .clearing_time = 0.5};
    SimulationConfig cfg{.t_end = 3.0, .step = 0.01, .stop_excursion = 2.0 * std::numbers::pi};
    const auto traj = simulate(c, p, fault, cfg);
    CHECK(traj.truncated);
    CHECK(traj.time.back() < 3.0);
    CHECK_FALSE(check_stability(traj, {}).stable);
}

TEST_CASE("contingency validation") {
    const auto c = smib();
    const auto p = smib_point(c);
    CHECK_THROWS_AS(simulate(c, p, ContingencySpec{.id = "x", .line_id = "Z", .fault_bus = 2}, {}), InvalidContingency);
    CHECK_THROWS_AS(simulate(c, p, ContingencySpec{.id = "x", .line_id = "A", .fault_bus = 7}, {}), InvalidContingency);
    CHECK_THROWS_AS(simulate(c, p, ContingencySpec{.id = "x", .line_id = "A", .fault_bus = 2, .clearing_time = 0.0}, {}),
                    InvalidContingency);
    CHECK_THROWS_AS(simulate(c, p, std::nullopt, {.t_end = 1.0, .step = 2.0}), std::invalid_argument);
}

TEST_CASE("trajectory CSV export") {
    const auto c = smib();
    const auto p = smib_point(c);
    const auto traj = simulate(c, p, std::nullopt, {.t_end = 0.2, .step = 0.1});
    const auto path = std::filesystem::temp_directory_path() / "tcop_traj_test.csv";
    traj.write_csv(path, {"INF", "G"});
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "time,angle_INF,angle_G,coi");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
    std::filesystem::remove(path);
}

TEST_CASE("contingency JSON round trip") {
    ContingencySpec s{.id = "C9", .line_id = "2-3", .fault_bus = 3, .fault_time = 0.1, .clearing_time = 0.08, .trip_line = false};
    nlohmann::json j;
    j["contingencies"] = nlohmann::json::array({contingency_to_json(s)});
    const auto back = contingencies_from_json(j).at(0);
    CHECK(back.id == s.id);
    CHECK(back.line_id == s.line_id);
    CHECK(back.fault_bus == 3);
    CHECK(back.fault_time == 0.1);
    CHECK(back.clearing_time == 0.08);
    CHECK_FALSE(back.trip_line);
}
