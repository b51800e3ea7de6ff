#include "tcop/dynamics/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include <Eigen/Dense>

namespace tcop::dynamics {

using grid::Complex;

namespace {

constexpr double kFaultAdmittance = 1e6;
constexpr double kNetworkTol = 1e-13;
constexpr int kNetworkMaxIter = 200;
constexpr double kStepTol = 1e-12;
constexpr int kStepMaxIter = 300;

struct Injection {
    Eigen::Index bus;
    Complex s;
};

// One network topology with its factorization.
class Network {
  public:
    Network(const Eigen::MatrixXcd& y, std::vector<Injection> injections, double v_threshold)
        : lu_(y), injections_(std::move(injections)), v_threshold_(v_threshold) {}

    // Solves Y V = I_norton + I_inj(V); `v` is the warm start and the result.
    void solve(const Eigen::VectorXcd& norton, Eigen::VectorXcd& v, double time) const {
        if (injections_.empty()) {
            v = lu_.solve(norton);
            return;
        }
        Eigen::VectorXcd rhs(norton.size());
        for (int it = 0; it < kNetworkMaxIter; ++it) {
            rhs = norton;
            for (const auto& inj : injections_) {
                const Complex vi = v[inj.bus];
                const double mag = std::abs(vi);
                if (mag >= v_threshold_) {
                    rhs[inj.bus] += std::conj(inj.s / vi);
                } else {
                    rhs[inj.bus] += std::conj(inj.s) * vi / (v_threshold_ * v_threshold_);
                }
            }
            Eigen::VectorXcd next = lu_.solve(rhs);
            if (!next.allFinite()) break;
            const double change = (next - v).cwiseAbs().maxCoeff();
            v = std::move(next);
            if (change < kNetworkTol) return;
        }
        throw SimulationCollapse("network algebraic solve failed", time);
    }

  private:
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu_;
    std::vector<Injection> injections_;
    double v_threshold_;
};

struct Machines {
    std::vector<Eigen::Index> bus;
    std::vector<double> xd;
    std::vector<double> m;
    std::vector<double> damping;
    std::vector<double> emf;  // |E'|
    std::vector<double> pm;
};

Eigen::MatrixXcd network_matrix(const grid::NetworkCase& c, const std::vector<double>& vm, const Machines& mach,
                                const std::string& removed_line, std::optional<Eigen::Index> fault_bus) {
    grid::NetworkCase topo = c;
    if (!removed_line.empty()) topo.lines.erase(topo.lines.begin() + static_cast<long>(c.line_index(removed_line)));
    Eigen::MatrixXcd y = Eigen::MatrixXcd(grid::build_admittance(topo));
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        const auto& b = c.buses[i];
        const auto k = static_cast<Eigen::Index>(i);
        y(k, k) += Complex(b.pd, -b.qd) / (vm[i] * vm[i]);
    }
    for (std::size_t g = 0; g < mach.bus.size(); ++g) y(mach.bus[g], mach.bus[g]) += 1.0 / Complex(0.0, mach.xd[g]);
    if (fault_bus) y(*fault_bus, *fault_bus) += Complex(0.0, -kFaultAdmittance);
    return y;
}

double max_excursion(const std::vector<double>& delta, const std::vector<double>& m) {
    const double coi = coi_angle(delta, m);
    double worst = 0.0;
    for (double d : delta) worst = std::max(worst, std::abs(d - coi));
    return worst;
}

}  // namespace

SimulationCollapse::SimulationCollapse(const std::string& what, double time_)
    : std::runtime_error(what + " at t=" + std::to_string(time_) + " s"), time(time_) {}

void ContingencySpec::validate(const grid::NetworkCase& c) const {
    if (!(clearing_time > 0.0)) throw InvalidContingency("contingency " + id + ": clearing time must be positive");
    if (fault_time < 0.0) throw InvalidContingency("contingency " + id + ": negative fault time");
    std::size_t li = 0;
    try {
        li = c.line_index(line_id);
    } catch (const grid::InvalidCase&) {
        throw InvalidContingency("contingency " + id + ": unknown line " + line_id);
    }
    const auto& line = c.lines[li];
    if (fault_bus != line.from && fault_bus != line.to) {
        throw InvalidContingency("contingency " + id + ": fault bus is not an endpoint of " + line_id);
    }
}

void SimulationConfig::validate() const {
    if (!(step > 0.0 && step < t_end)) throw std::invalid_argument("simulation step must satisfy 0 < step < t_end");
}

double machine_inertia(const grid::Generator& g) { return 2.0 * g.h / (2.0 * std::numbers::pi * kNominalFrequencyHz); }

double coi_angle(std::span<const double> angles, std::span<const double> inertias) {
    if (angles.empty()) throw std::invalid_argument("centre of inertia of an empty machine set");
    if (angles.size() != inertias.size()) throw std::invalid_argument("angle and inertia counts differ");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < angles.size(); ++i) {
        num += inertias[i] * angles[i];
        den += inertias[i];
    }
    if (!(den > 0.0)) throw std::invalid_argument("total inertia must be positive");
    return num / den;
}

Trajectory simulate(const grid::NetworkCase& c, const grid::OperatingPoint& point,
                    const std::optional<ContingencySpec>& contingency, const SimulationConfig& config) {
    config.validate();
    if (contingency) contingency->validate(c);
    const auto nb = static_cast<Eigen::Index>(c.buses.size());
    const auto ng = c.generators.size();
    if (ng == 0) throw std::invalid_argument("simulation needs at least one machine");

    Machines mach;
    std::vector<double> delta(ng), omega(ng, 0.0);
    Eigen::VectorXcd v(nb);
    for (Eigen::Index i = 0; i < nb; ++i) {
        v[i] = std::polar(point.vm[static_cast<std::size_t>(i)], point.va[static_cast<std::size_t>(i)]);
    }
    for (std::size_t g = 0; g < ng; ++g) {
        const auto& gen = c.generators[g];
        const auto bus = static_cast<Eigen::Index>(c.bus_index(gen.bus));
        const Complex current = std::conj(Complex(point.pg[g], point.qg[g]) / v[bus]);
        const Complex emf = v[bus] + Complex(0.0, gen.xd_prime) * current;
        mach.bus.push_back(bus);
        mach.xd.push_back(gen.xd_prime);
        mach.m.push_back(machine_inertia(gen));
        mach.damping.push_back(gen.damping);
        mach.emf.push_back(std::abs(emf));
        delta[g] = std::arg(emf);
    }

    std::vector<Injection> injections;
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) {
        injections.push_back({static_cast<Eigen::Index>(c.bus_index(c.wind_farms[w].bus)), Complex(point.pw[w], 0.0)});
    }
    for (std::size_t e = 0; e < c.storage.size(); ++e) {
        injections.push_back({static_cast<Eigen::Index>(c.bus_index(c.storage[e].bus)), Complex(point.pe[e], 0.0)});
    }

    const Network pre(network_matrix(c, point.vm, mach, "", std::nullopt), injections, config.low_voltage_threshold);
    std::optional<Network> fault_on, post;
    if (contingency) {
        const auto fb = static_cast<Eigen::Index>(c.bus_index(contingency->fault_bus));
        fault_on.emplace(network_matrix(c, point.vm, mach, "", fb), injections, config.low_voltage_threshold);
        post.emplace(network_matrix(c, point.vm, mach, contingency->trip_line ? contingency->line_id : "", std::nullopt),
                     injections, config.low_voltage_threshold);
    }

    Eigen::VectorXcd norton(nb);
    auto electrical_power = [&](const Network& net, const std::vector<double>& d, double t) {
        norton.setZero();
        std::vector<Complex> e(ng);
        for (std::size_t g = 0; g < ng; ++g) {
            e[g] = std::polar(mach.emf[g], d[g]);
            norton[mach.bus[g]] += e[g] / Complex(0.0, mach.xd[g]);
        }
        net.solve(norton, v, t);
        std::vector<double> pe(ng);
        for (std::size_t g = 0; g < ng; ++g) {
            const Complex current = (e[g] - v[mach.bus[g]]) / Complex(0.0, mach.xd[g]);
            pe[g] = (e[g] * std::conj(current)).real();
        }
        return pe;
    };

    // Mechanical power is the initial electrical power of the dynamic model.
    mach.pm = electrical_power(pre, delta, 0.0);

    auto accel = [&](const std::vector<double>& pe, const std::vector<double>& w) {
        std::vector<double> a(ng);
        for (std::size_t g = 0; g < ng; ++g) a[g] = mach.pm[g] - pe[g] - mach.damping[g] * w[g];
        return a;
    };

    Trajectory traj;
    traj.inertia = mach.m;
    auto record = [&](double t) {
        traj.time.push_back(t);
        traj.angle.push_back(delta);
        traj.speed.push_back(omega);
        traj.coi.push_back(coi_angle(delta, mach.m));
    };
    record(0.0);

    std::vector<std::pair<double, const Network*>> events;
    if (contingency) {
        events.emplace_back(contingency->fault_time, &*fault_on);
        events.emplace_back(contingency->fault_time + contingency->clearing_time, &*post);
    }
    std::size_t next_event = 0;
    const Network* net = &pre;

    double t = 0.0;
    long grid_index = 0;
    while (t < config.t_end - 1e-12) {
        while (next_event < events.size() && events[next_event].first <= t + 1e-12) {
            net = events[next_event].second;
            ++next_event;
        }
        double t_next = std::min(static_cast<double>(grid_index + 1) * config.step, config.t_end);
        if (t_next <= t + 1e-12) {
            ++grid_index;
            continue;
        }
        if (next_event < events.size() && events[next_event].first < t_next - 1e-12) {
            t_next = events[next_event].first;
        } else {
            ++grid_index;
        }
        const double h = t_next - t;

        const auto a0 = accel(electrical_power(*net, delta, t), omega);
        std::vector<double> d_new = delta, w_new = omega;
        for (std::size_t g = 0; g < ng; ++g) {
            w_new[g] = omega[g] + h * a0[g] / mach.m[g];
            d_new[g] = delta[g] + h * omega[g];
        }
        bool converged = false;
        for (int it = 0; it < kStepMaxIter; ++it) {
            const auto pe = electrical_power(*net, d_new, t_next);
            double change = 0.0;
            for (std::size_t g = 0; g < ng; ++g) {
                const double coef = h / (2.0 * mach.m[g]);
                const double w = (omega[g] + coef * (a0[g] + mach.pm[g] - pe[g])) / (1.0 + coef * mach.damping[g]);
                const double d = delta[g] + 0.5 * h * (omega[g] + w);
                change = std::max(change, std::abs(d - d_new[g]));
                w_new[g] = w;
                d_new[g] = d;
            }
            if (!std::isfinite(change)) break;
            if (change < kStepTol) {
                converged = true;
                break;
            }
        }
        if (!converged) throw SimulationCollapse("trapezoidal corrector did not converge", t_next);
        delta = std::move(d_new);
        omega = std::move(w_new);
        t = t_next;
        record(t);
        if (config.stop_excursion && max_excursion(delta, mach.m) >= *config.stop_excursion) {
            traj.truncated = true;
            break;
        }
    }
    return traj;
}

StabilityVerdict check_stability(const Trajectory& traj, const StabilityCriterion& criterion) {
    StabilityVerdict out;
    for (std::size_t k = 0; k < traj.time.size(); ++k) {
        for (double d : traj.angle[k]) out.worst_excursion = std::max(out.worst_excursion, std::abs(d - traj.coi[k]));
    }
    out.stable = out.worst_excursion < criterion.delta_max;
    return out;
}

void Trajectory::write_csv(const std::filesystem::path& path, const std::vector<std::string>& names) const {
    std::ofstream out(path);
    out << "time";
    for (std::size_t g = 0; g < machines(); ++g) {
        out << ",angle_" << (g < names.size() ? names[g] : std::to_string(g));
    }
    out << ",coi\n" << std::setprecision(10);
    for (std::size_t k = 0; k < time.size(); ++k) {
        out << time[k];
        for (double d : angle[k]) out << ',' << d;
        out << ',' << coi[k] << '\n';
    }
}

std::vector<ContingencySpec> contingencies_from_json(const nlohmann::json& case_json) {
    std::vector<ContingencySpec> out;
    for (const auto& j : case_json.value("contingencies", nlohmann::json::array())) {
        ContingencySpec s;
        s.line_id = j.at("line").get<std::string>();
        s.id = j.value("id", s.line_id);
        s.fault_bus = j.at("fault_bus").get<int>();
        s.fault_time = j.value("fault_time_s", 0.0);
        s.clearing_time = j.value("clearing_time_s", 0.1);
        s.trip_line = j.value("trip", true);
        out.push_back(s);
    }
    return out;
}

nlohmann::json contingency_to_json(const ContingencySpec& s) {
    return {{"id", s.id},
            {"line", s.line_id},
            {"fault_bus", s.fault_bus},
            {"fault_time_s", s.fault_time},
            {"clearing_time_s", s.clearing_time},
            {"trip", s.trip_line}};
}

}  // namespace tcop::dynamics
