#pragma once

#include <array>
#include <complex>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "tcop/grid/network.hpp"

namespace tcop::grid {

using Complex = std::complex<double>;
using AdmittanceMatrix = Eigen::SparseMatrix<Complex>;

/// Bus admittance matrix in case bus order. Rejects duplicate lines.
AdmittanceMatrix build_admittance(const NetworkCase& c);

/// A solved (or to-be-solved) steady state. Bus vectors follow case bus order,
/// device vectors follow the case's device lists.
struct OperatingPoint {
    std::vector<double> vm;
    std::vector<double> va;
    std::vector<double> pg;
    std::vector<double> qg;
    std::vector<double> pw;
    std::vector<double> pe;
    std::vector<double> ee;
    std::vector<double> line_p;  // from-end active flow per line

    /// V = 1 (setpoint at PV/slack buses), angles 0, dispatch copied from the case.
    static OperatingPoint flat_start(const NetworkCase& c);
};

struct PowerFlowOptions {
    double tolerance = 1e-8;
    int max_iterations = 30;
    bool enforce_q_limits = false;
};

struct PowerFlowResult {
    OperatingPoint point;
    int iterations = 0;
    double max_mismatch = 0.0;
};

class PowerFlowDiverged : public std::runtime_error {
  public:
    PowerFlowDiverged(double mismatch, int iterations);
    double mismatch;
    int iterations;
};

class SingularJacobian : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Newton-Raphson in polar coordinates. Setpoints come from `guess`: generator
/// P (except slack), PV/slack voltage magnitudes, wind and storage injections.
PowerFlowResult solve_power_flow(const NetworkCase& c, const OperatingPoint& guess,
                                 const PowerFlowOptions& options = {});

/// Complex bus injections S = V conj(Y V) at the given state.
std::vector<Complex> bus_injections(const AdmittanceMatrix& y, const std::vector<double>& vm,
                                    const std::vector<double>& va);

/// Specified net injections (generation + wind + storage - load) per bus.
std::vector<Complex> scheduled_injections(const NetworkCase& c, const OperatingPoint& p);

/// Largest |P| or |Q| mismatch over the given buses' equations (non-slack P, PQ Q).
double max_mismatch(const NetworkCase& c, const OperatingPoint& p);

// ---------------------------------------------------------------------------
// Branch flows and their derivatives.

/// Admittance terms seen from one end of a branch: S_s = conj(Yss) Vs^2 + Vs Vr e^{j(ts-tr)} conj(Ysr).
struct BranchEnd {
    double g_self = 0.0;
    double b_self = 0.0;
    double g_transfer = 0.0;
    double b_transfer = 0.0;
    std::size_t sending = 0;    // bus indices
    std::size_t receiving = 0;
};

BranchEnd branch_end(const NetworkCase& c, const Line& line, bool from_side);

/// Value, gradient and Hessian of one flow in the local variables
/// (V_sending, V_receiving, theta_sending, theta_receiving).
struct LocalFlow {
    double value = 0.0;
    std::array<double, 4> grad{};
    std::array<std::array<double, 4>, 4> hess{};
};

LocalFlow active_flow(const BranchEnd& e, double vs, double vr, double ts, double tr);
LocalFlow reactive_flow(const BranchEnd& e, double vs, double vr, double ts, double tr);

/// Active power leaving `sending_bus` into the line. sending_bus defaults to the from bus.
double line_flow(const NetworkCase& c, const OperatingPoint& p, const std::string& line_id);
double line_flow(const NetworkCase& c, const OperatingPoint& p, const std::string& line_id, int sending_bus);

/// Flow derivatives with respect to the full state [V_1..V_n, theta_1..theta_n].
struct FlowDerivatives {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
    std::array<std::size_t, 4> state_index{};  // positions of the local variables in the full state
    LocalFlow local;
};

FlowDerivatives line_flow_derivatives(const NetworkCase& c, const OperatingPoint& p,
                                      const std::string& line_id, int sending_bus);
FlowDerivatives line_flow_derivatives(const NetworkCase& c, const OperatingPoint& p,
                                      const std::string& line_id);

/// Fills p.line_p with from-end flows.
void update_line_flows(const NetworkCase& c, OperatingPoint& p);

/// Total series and shunt losses of the network at the point.
double network_losses(const NetworkCase& c, const OperatingPoint& p);

}  // namespace tcop::grid
