#include "tcop/grid/power_flow.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include <Eigen/SparseLU>

namespace tcop::grid {

AdmittanceMatrix build_admittance(const NetworkCase& c) {
    const auto n = static_cast<Eigen::Index>(c.buses.size());
    std::vector<Eigen::Triplet<Complex>> trips;
    trips.reserve(c.lines.size() * 4 + c.buses.size());

    std::set<std::tuple<int, int, std::string>> seen;
    for (const auto& l : c.lines) {
        auto key = std::make_tuple(std::min(l.from, l.to), std::max(l.from, l.to), l.id);
        if (!seen.insert(key).second) {
            throw InvalidCase("duplicate line " + l.id + " between buses " + std::to_string(l.from) + " and " +
                              std::to_string(l.to));
        }
        const auto f = static_cast<Eigen::Index>(c.bus_index(l.from));
        const auto t = static_cast<Eigen::Index>(c.bus_index(l.to));
        const Complex ys = 1.0 / Complex(l.r, l.x);
        const Complex charging(0.0, l.b / 2.0);
        trips.emplace_back(f, f, (ys + charging) / (l.tap * l.tap));
        trips.emplace_back(t, t, ys + charging);
        trips.emplace_back(f, t, -ys / l.tap);
        trips.emplace_back(t, f, -ys / l.tap);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = c.buses[static_cast<std::size_t>(i)];
        trips.emplace_back(i, i, Complex(b.gs, b.bs));
    }
    AdmittanceMatrix y(n, n);
    y.setFromTriplets(trips.begin(), trips.end());
    y.makeCompressed();
    return y;
}

OperatingPoint OperatingPoint::flat_start(const NetworkCase& c) {
    OperatingPoint p;
    p.vm.assign(c.buses.size(), 1.0);
    p.va.assign(c.buses.size(), 0.0);
    for (const auto& g : c.generators) {
        p.pg.push_back(g.p);
        p.qg.push_back(0.0);
        const auto i = c.bus_index(g.bus);
        if (c.buses[i].type != BusType::pq) p.vm[i] = g.vg;
    }
    for (const auto& w : c.wind_farms) p.pw.push_back(w.p);
    for (const auto& e : c.storage) {
        p.pe.push_back(e.p);
        p.ee.push_back(e.e0);
    }
    p.line_p.assign(c.lines.size(), 0.0);
    return p;
}

PowerFlowDiverged::PowerFlowDiverged(double mismatch_, int iterations_)
    : std::runtime_error("power flow did not converge in " + std::to_string(iterations_) +
                         " iterations (mismatch " + std::to_string(mismatch_) + " p.u.)"),
      mismatch(mismatch_),
      iterations(iterations_) {}

std::vector<Complex> bus_injections(const AdmittanceMatrix& y, const std::vector<double>& vm,
                                    const std::vector<double>& va) {
    const auto n = vm.size();
    std::vector<Complex> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
    std::vector<Complex> current(n, Complex(0.0, 0.0));
    for (Eigen::Index k = 0; k < y.outerSize(); ++k) {
        for (AdmittanceMatrix::InnerIterator it(y, k); it; ++it) {
            current[static_cast<std::size_t>(it.row())] += it.value() * v[static_cast<std::size_t>(it.col())];
        }
    }
    std::vector<Complex> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = v[i] * std::conj(current[i]);
    return s;
}

std::vector<Complex> scheduled_injections(const NetworkCase& c, const OperatingPoint& p) {
    std::vector<Complex> s(c.buses.size());
    for (std::size_t i = 0; i < c.buses.size(); ++i) s[i] = Complex(-c.buses[i].pd, -c.buses[i].qd);
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        s[c.bus_index(c.generators[g].bus)] += Complex(p.pg[g], p.qg.empty() ? 0.0 : p.qg[g]);
    }
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) s[c.bus_index(c.wind_farms[w].bus)] += p.pw[w];
    for (std::size_t e = 0; e < c.storage.size(); ++e) s[c.bus_index(c.storage[e].bus)] += p.pe[e];
    return s;
}

double max_mismatch(const NetworkCase& c, const OperatingPoint& p) {
    const auto y = build_admittance(c);
    const auto calc = bus_injections(y, p.vm, p.va);
    const auto sched = scheduled_injections(c, p);
    double worst = 0.0;
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        const auto d = calc[i] - sched[i];
        worst = std::max({worst, std::abs(d.real()), std::abs(d.imag())});
    }
    return worst;
}

namespace {

struct NewtonLayout {
    std::vector<int> theta_pos;  // -1 for slack
    std::vector<int> vm_pos;     // -1 unless PQ
    int size = 0;
};

NewtonLayout make_layout(const std::vector<BusType>& types) {
    NewtonLayout lay;
    lay.theta_pos.assign(types.size(), -1);
    lay.vm_pos.assign(types.size(), -1);
    for (std::size_t i = 0; i < types.size(); ++i) {
        if (types[i] != BusType::slack) lay.theta_pos[i] = lay.size++;
    }
    for (std::size_t i = 0; i < types.size(); ++i) {
        if (types[i] == BusType::pq) lay.vm_pos[i] = lay.size++;
    }
    return lay;
}

struct NewtonOutcome {
    int iterations = 0;
    double mismatch = 0.0;
};

// Runs Newton iterations in place on vm/va for fixed scheduled injections.
NewtonOutcome newton(const AdmittanceMatrix& y, const std::vector<BusType>& types, const std::vector<Complex>& sched,
                     std::vector<double>& vm, std::vector<double>& va, const PowerFlowOptions& options) {
    const auto n = types.size();
    const auto lay = make_layout(types);
    // The P equation row of bus i shares theta_pos; the Q row shares vm_pos.
    Eigen::VectorXd f(lay.size);
    std::vector<Complex> v(n), current(n);

    auto evaluate = [&]() {
        for (std::size_t i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
        std::fill(current.begin(), current.end(), Complex(0.0, 0.0));
        for (Eigen::Index k = 0; k < y.outerSize(); ++k) {
            for (AdmittanceMatrix::InnerIterator it(y, k); it; ++it) {
                current[static_cast<std::size_t>(it.row())] += it.value() * v[static_cast<std::size_t>(it.col())];
            }
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Complex mis = v[i] * std::conj(current[i]) - sched[i];
            if (lay.theta_pos[i] >= 0) {
                f[lay.theta_pos[i]] = mis.real();
                worst = std::max(worst, std::abs(mis.real()));
            }
            if (lay.vm_pos[i] >= 0) {
                f[lay.vm_pos[i]] = mis.imag();
                worst = std::max(worst, std::abs(mis.imag()));
            }
        }
        return worst;
    };

    NewtonOutcome out;
    out.mismatch = evaluate();
    std::vector<Eigen::Triplet<double>> trips;
    while (out.mismatch > options.tolerance) {
        if (out.iterations >= options.max_iterations || !std::isfinite(out.mismatch)) {
            throw PowerFlowDiverged(out.mismatch, out.iterations);
        }
        trips.clear();
        for (Eigen::Index k = 0; k < y.outerSize(); ++k) {
            for (AdmittanceMatrix::InnerIterator it(y, k); it; ++it) {
                const auto i = static_cast<std::size_t>(it.row());
                const auto j = static_cast<std::size_t>(it.col());
                Complex ds_dva, ds_dvm;
                if (i == j) {
                    ds_dva = Complex(0.0, 1.0) * v[i] * std::conj(current[i]) -
                             Complex(0.0, 1.0) * v[i] * std::conj(it.value() * v[i]);
                    const Complex unit = v[i] / vm[i];
                    ds_dvm = unit * std::conj(current[i]) + v[i] * std::conj(it.value() * unit);
                } else {
                    ds_dva = Complex(0.0, -1.0) * v[i] * std::conj(it.value() * v[j]);
                    ds_dvm = v[i] * std::conj(it.value() * v[j]) / vm[j];
                }
                if (lay.theta_pos[i] >= 0) {
                    if (lay.theta_pos[j] >= 0) trips.emplace_back(lay.theta_pos[i], lay.theta_pos[j], ds_dva.real());
                    if (lay.vm_pos[j] >= 0) trips.emplace_back(lay.theta_pos[i], lay.vm_pos[j], ds_dvm.real());
                }
                if (lay.vm_pos[i] >= 0) {
                    if (lay.theta_pos[j] >= 0) trips.emplace_back(lay.vm_pos[i], lay.theta_pos[j], ds_dva.imag());
                    if (lay.vm_pos[j] >= 0) trips.emplace_back(lay.vm_pos[i], lay.vm_pos[j], ds_dvm.imag());
                }
            }
        }
        Eigen::SparseMatrix<double> jac(lay.size, lay.size);
        jac.setFromTriplets(trips.begin(), trips.end());
        jac.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(jac);
        if (lu.info() != Eigen::Success) throw SingularJacobian("power flow Jacobian is singular");
        const Eigen::VectorXd dx = lu.solve(-f);
        if (lu.info() != Eigen::Success || !dx.allFinite()) throw SingularJacobian("power flow Jacobian is singular");
        for (std::size_t i = 0; i < n; ++i) {
            if (lay.theta_pos[i] >= 0) va[i] += dx[lay.theta_pos[i]];
            if (lay.vm_pos[i] >= 0) vm[i] += dx[lay.vm_pos[i]];
        }
        ++out.iterations;
        out.mismatch = evaluate();
    }
    return out;
}

}  // namespace

PowerFlowResult solve_power_flow(const NetworkCase& c, const OperatingPoint& guess, const PowerFlowOptions& options) {
    const auto n = c.buses.size();
    if (guess.vm.size() != n || guess.va.size() != n || guess.pg.size() != c.generators.size() ||
        guess.pw.size() != c.wind_farms.size() || guess.pe.size() != c.storage.size()) {
        throw InvalidCase("operating point does not match the case dimensions");
    }
    for (double v : guess.vm) {
        if (!(v > 0.0)) throw InvalidCase("initial guess has a non-positive voltage");
    }
    const auto y = build_admittance(c);
    const auto slack = c.slack_index();

    std::vector<BusType> types(n);
    for (std::size_t i = 0; i < n; ++i) types[i] = c.buses[i].type;

    OperatingPoint p = guess;
    if (p.qg.size() != c.generators.size()) p.qg.assign(c.generators.size(), 0.0);
    if (p.ee.size() != c.storage.size()) {
        p.ee.clear();
        for (const auto& e : c.storage) p.ee.push_back(e.e0);
    }
    // Reactive output of generators whose bus was switched to PQ.
    std::vector<std::optional<double>> q_fixed(c.generators.size());

    PowerFlowResult result;
    for (int round = 0; round < 20; ++round) {
        auto sched = scheduled_injections(c, p);
        // Generator Q at voltage-controlled buses is an output, not a schedule.
        for (std::size_t g = 0; g < c.generators.size(); ++g) {
            const auto i = c.bus_index(c.generators[g].bus);
            sched[i] -= Complex(0.0, p.qg[g]);
            if (q_fixed[g]) sched[i] += Complex(0.0, *q_fixed[g]);
        }
        const auto out = newton(y, types, sched, p.vm, p.va, options);
        result.iterations += out.iterations;
        result.max_mismatch = out.mismatch;

        const auto calc = bus_injections(y, p.vm, p.va);
        for (std::size_t g = 0; g < c.generators.size(); ++g) {
            const auto i = c.bus_index(c.generators[g].bus);
            // Everything at the bus except this generator.
            Complex others(-c.buses[i].pd, -c.buses[i].qd);
            for (std::size_t w = 0; w < c.wind_farms.size(); ++w) {
                if (c.wind_farms[w].bus == c.buses[i].id) others += p.pw[w];
            }
            for (std::size_t e = 0; e < c.storage.size(); ++e) {
                if (c.storage[e].bus == c.buses[i].id) others += p.pe[e];
            }
            if (i == slack) p.pg[g] = calc[i].real() - others.real();
            p.qg[g] = q_fixed[g] ? *q_fixed[g] : calc[i].imag() - others.imag();
        }
        if (!options.enforce_q_limits) break;

        bool switched = false;
        for (std::size_t g = 0; g < c.generators.size(); ++g) {
            const auto i = c.bus_index(c.generators[g].bus);
            if (types[i] != BusType::pv) continue;
            const auto& gen = c.generators[g];
            if (p.qg[g] > gen.q_max + 1e-9) {
                q_fixed[g] = gen.q_max;
            } else if (p.qg[g] < gen.q_min - 1e-9) {
                q_fixed[g] = gen.q_min;
            } else {
                continue;
            }
            p.qg[g] = *q_fixed[g];
            types[i] = BusType::pq;
            switched = true;
        }
        if (!switched) break;
    }
    update_line_flows(c, p);
    result.point = std::move(p);
    return result;
}

// ---------------------------------------------------------------------------

BranchEnd branch_end(const NetworkCase& c, const Line& line, bool from_side) {
    const Complex ys = 1.0 / Complex(line.r, line.x);
    const Complex charging(0.0, line.b / 2.0);
    BranchEnd e;
    Complex self, transfer = -ys / line.tap;
    if (from_side) {
        self = (ys + charging) / (line.tap * line.tap);
        e.sending = c.bus_index(line.from);
        e.receiving = c.bus_index(line.to);
    } else {
        self = ys + charging;
        e.sending = c.bus_index(line.to);
        e.receiving = c.bus_index(line.from);
    }
    e.g_self = self.real();
    e.b_self = self.imag();
    e.g_transfer = transfer.real();
    e.b_transfer = transfer.imag();
    return e;
}

// Shared structure: value = a Vs^2 + Vs Vr (p cos d + q sin d), d = ts - tr.
namespace {

LocalFlow flow_form(double a, double pc, double qs, double vs, double vr, double ts, double tr) {
    const double d = ts - tr;
    const double cs = std::cos(d);
    const double sn = std::sin(d);
    const double trig = pc * cs + qs * sn;    // f(d)
    const double dtrig = -pc * sn + qs * cs;  // f'(d)
    const double vv = vs * vr;

    LocalFlow out;
    out.value = a * vs * vs + vv * trig;
    // order: Vs, Vr, ts, tr
    out.grad = {2.0 * a * vs + vr * trig, vs * trig, vv * dtrig, -vv * dtrig};
    auto& h = out.hess;
    h[0][0] = 2.0 * a;
    h[0][1] = h[1][0] = trig;
    h[1][1] = 0.0;
    h[0][2] = h[2][0] = vr * dtrig;
    h[0][3] = h[3][0] = -vr * dtrig;
    h[1][2] = h[2][1] = vs * dtrig;
    h[1][3] = h[3][1] = -vs * dtrig;
    // f''(d) = -f(d)
    h[2][2] = -vv * trig;
    h[3][3] = -vv * trig;
    h[2][3] = h[3][2] = vv * trig;
    return out;
}

}  // namespace

LocalFlow active_flow(const BranchEnd& e, double vs, double vr, double ts, double tr) {
    return flow_form(e.g_self, e.g_transfer, e.b_transfer, vs, vr, ts, tr);
}

LocalFlow reactive_flow(const BranchEnd& e, double vs, double vr, double ts, double tr) {
    // Q = -b_self Vs^2 + Vs Vr (g sin d - b cos d)
    return flow_form(-e.b_self, -e.b_transfer, e.g_transfer, vs, vr, ts, tr);
}

namespace {

const Line& lookup_line(const NetworkCase& c, const std::string& line_id) { return c.lines.at(c.line_index(line_id)); }

bool sending_is_from(const Line& line, int sending_bus) {
    if (sending_bus == line.from) return true;
    if (sending_bus == line.to) return false;
    throw InvalidCase("bus " + std::to_string(sending_bus) + " is not an endpoint of line " + line.id);
}

}  // namespace

double line_flow(const NetworkCase& c, const OperatingPoint& p, const std::string& line_id) {
    return line_flow(c, p, line_id, lookup_line(c, line_id).from);
}

double line_flow(const NetworkCase& c, const OperatingPoint& p, const std::string& line_id, int sending_bus) {
    const auto& line = lookup_line(c, line_id);
    const auto e = branch_end(c, line, sending_is_from(line, sending_bus));
    return active_flow(e, p.vm[e.sending], p.vm[e.receiving], p.va[e.sending], p.va[e.receiving]).value;
}

FlowDerivatives line_flow_derivatives(const NetworkCase& c, const OperatingPoint& p, const std::string& line_id) {
    return line_flow_derivatives(c, p, line_id, lookup_line(c, line_id).from);
}

FlowDerivatives line_flow_derivatives(const NetworkCase& c, const OperatingPoint& p, const std::string& line_id,
                                      int sending_bus) {
    const auto& line = lookup_line(c, line_id);
    const auto e = branch_end(c, line, sending_is_from(line, sending_bus));
    const auto n = c.buses.size();
    FlowDerivatives d;
    d.local = active_flow(e, p.vm[e.sending], p.vm[e.receiving], p.va[e.sending], p.va[e.receiving]);
    d.value = d.local.value;
    d.state_index = {e.sending, e.receiving, n + e.sending, n + e.receiving};
    d.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n));
    d.hessian = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * n), static_cast<Eigen::Index>(2 * n));
    for (int a = 0; a < 4; ++a) {
        const auto ia = static_cast<Eigen::Index>(d.state_index[a]);
        d.gradient[ia] += d.local.grad[a];
        for (int b = 0; b < 4; ++b) {
            d.hessian(ia, static_cast<Eigen::Index>(d.state_index[b])) += d.local.hess[a][b];
        }
    }
    return d;
}

void update_line_flows(const NetworkCase& c, OperatingPoint& p) {
    p.line_p.resize(c.lines.size());
    for (std::size_t k = 0; k < c.lines.size(); ++k) {
        const auto e = branch_end(c, c.lines[k], true);
        p.line_p[k] = active_flow(e, p.vm[e.sending], p.vm[e.receiving], p.va[e.sending], p.va[e.receiving]).value;
    }
}

double network_losses(const NetworkCase& c, const OperatingPoint& p) {
    double losses = 0.0;
    for (const auto& line : c.lines) {
        for (bool from : {true, false}) {
            const auto e = branch_end(c, line, from);
            losses += active_flow(e, p.vm[e.sending], p.vm[e.receiving], p.va[e.sending], p.va[e.receiving]).value;
        }
    }
    for (std::size_t i = 0; i < c.buses.size(); ++i) losses += c.buses[i].gs * p.vm[i] * p.vm[i];
    return losses;
}

}  // namespace tcop::grid
