#pragma once

#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace tcop::ipm {

using SparseMatrix = Eigen::SparseMatrix<double>;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// min F(x)  s.t.  H(x) = 0,  g_lower <= g(x) <= g_upper.
/// Infinite bounds switch that side of a constraint off.
class NlpProblem {
  public:
    virtual ~NlpProblem() = default;

    virtual Eigen::Index variables() const = 0;
    virtual Eigen::Index equalities() const = 0;
    virtual Eigen::Index inequalities() const = 0;
    virtual Eigen::VectorXd g_lower() const = 0;
    virtual Eigen::VectorXd g_upper() const = 0;

    virtual double objective(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd equality(const Eigen::VectorXd& x) const = 0;
    virtual SparseMatrix equality_jacobian(const Eigen::VectorXd& x) const = 0;  // equalities x variables
    virtual Eigen::VectorXd inequality(const Eigen::VectorXd& x) const = 0;
    virtual SparseMatrix inequality_jacobian(const Eigen::VectorXd& x) const = 0;  // inequalities x variables
    /// Full symmetric matrix  d2F + sum_i eq_weights_i d2H_i + sum_j ineq_weights_j d2g_j.
    virtual SparseMatrix lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& eq_weights,
                                            const Eigen::VectorXd& ineq_weights) const = 0;

    /// Throws std::invalid_argument on inconsistent dimensions or crossed bounds.
    void validate() const;
};

/// Callback-backed problem, convenient for small instances and tests.
class FunctionProblem : public NlpProblem {
  public:
    Eigen::Index n = 0, m = 0, r = 0;
    Eigen::VectorXd lower, upper;
    std::function<double(const Eigen::VectorXd&)> f;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> df;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> h;
    std::function<SparseMatrix(const Eigen::VectorXd&)> dh;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> g;
    std::function<SparseMatrix(const Eigen::VectorXd&)> dg;
    std::function<SparseMatrix(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&)> hess;

    Eigen::Index variables() const override { return n; }
    Eigen::Index equalities() const override { return m; }
    Eigen::Index inequalities() const override { return r; }
    Eigen::VectorXd g_lower() const override { return lower; }
    Eigen::VectorXd g_upper() const override { return upper; }
    double objective(const Eigen::VectorXd& x) const override { return f(x); }
    Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const override { return df(x); }
    Eigen::VectorXd equality(const Eigen::VectorXd& x) const override;
    SparseMatrix equality_jacobian(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd inequality(const Eigen::VectorXd& x) const override;
    SparseMatrix inequality_jacobian(const Eigen::VectorXd& x) const override;
    SparseMatrix lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& eq_weights,
                                    const Eigen::VectorXd& ineq_weights) const override {
        return hess(x, eq_weights, ineq_weights);
    }
};

/// Convex quadratic program  min 1/2 x'Qx + c'x  s.t.  A x = b,  lo <= G x <= hi.
FunctionProblem quadratic_program(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, const Eigen::MatrixXd& a,
                                  const Eigen::VectorXd& b, const Eigen::MatrixXd& g, const Eigen::VectorXd& lo,
                                  const Eigen::VectorXd& hi);

struct IpmOptions {
    double sigma = 0.1;            // centring parameter
    double step_factor = 0.9995;   // fraction to the boundary
    double gap_tolerance = 1e-6;   // epsilon on the complementarity gap
    double feasibility_tolerance = 1e-6;
    double stationarity_tolerance = 1e-6;  // relative to 1 + |grad F|_inf
    int max_iterations = 200;
    double mu0 = 0.1;
    double slack_margin = 0.1;
    double regularization_start = 1e-8;
    double regularization_max = 1e20;
    std::string trace_path;  // iteration CSV, empty = off

    void validate() const;
};

/// Primal-dual iterate. Slacks l (lower side) and u (upper side) with their
/// multipliers z and w, all kept strictly positive; entries for infinite
/// bounds are carried but frozen at 1 and ignored.
struct KktState {
    Eigen::VectorXd x;
    Eigen::VectorXd y;  // equality multipliers
    Eigen::VectorXd l, u, z, w;
    double mu = 0.1;

    /// (l'z + u'w) over the active sides.
    double gap(const std::vector<bool>& has_lower, const std::vector<bool>& has_upper) const;
};

struct Step {
    Eigen::VectorXd dx, dy, dl, du, dz, dw;
    double regularization = 0.0;
    double residual = 0.0;  // relative residual of the condensed solve
};

class FactorizationFailed : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Residuals of the perturbed KKT system at `s`.
struct Residuals {
    Eigen::VectorXd stationarity;  // grad F - A'y - J'(z - w)
    Eigen::VectorXd equality;      // H(x)
    Eigen::VectorXd lower;         // g - l - g_lower
    Eigen::VectorXd upper;         // g + u - g_upper
};

/// Which sides of each inequality are finite.
struct Sides {
    std::vector<bool> lower, upper;
    Eigen::Index count() const;
    static Sides of(const NlpProblem& p);
};

Residuals residuals(const NlpProblem& p, const KktState& s, const Sides& sides);

/// Newton direction from the condensed system with the inertia-corrected
/// factorization, then slack and multiplier recovery.
Step newton_step(const NlpProblem& p, const KktState& s, const Sides& sides, const IpmOptions& options);

struct StepLengths {
    double primal = 1.0;
    double dual = 1.0;
};
/// alpha = min(factor * min blocking ratio, 1) separately for primal slacks and multipliers.
StepLengths step_lengths(const KktState& s, const Step& d, const Sides& sides, double factor = 0.9995);

/// sigma * gap / (number of active slack sides), floored at 1e-14.
double update_barrier(double gap, Eigen::Index sides, double sigma);

/// Interior starting point: slacks at least `margin`, multipliers mu0 / slack.
KktState initial_state(const NlpProblem& p, const Eigen::VectorXd& x0, const Sides& sides, const IpmOptions& options);

enum class Status { converged, max_iterations, factorization_failed, callback_error };
std::string to_string(Status s);

struct IterationLog {
    int iteration;
    double gap, mu, alpha_p, alpha_d, feasibility, stationarity, objective, regularization;
};

struct Result {
    Status status = Status::max_iterations;
    Eigen::VectorXd x, y, z, w, l, u;
    double objective = 0.0;
    int iterations = 0;
    double gap = 0.0;
    double feasibility = 0.0;
    double stationarity = 0.0;
    std::vector<double> gap_history;
    std::vector<IterationLog> log;
    std::string message;

    bool ok() const { return status == Status::converged; }
    /// Net multiplier of each inequality: positive when the upper side binds.
    Eigen::VectorXd inequality_multipliers() const { return w - z; }
};

Result solve(const NlpProblem& p, const Eigen::VectorXd& x0, const IpmOptions& options = {});

}  // namespace tcop::ipm
