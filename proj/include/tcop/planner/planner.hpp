#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tcop/dataset/dataset.hpp"
#include "tcop/grid/network.hpp"
#include "tcop/grid/power_flow.hpp"
#include "tcop/ipm/ipm.hpp"
#include "tcop/planner/scenario.hpp"
#include "tcop/surrogate/surrogate.hpp"
#include "tcop/ttc/ttc.hpp"

namespace tcop::planner {

// ---------------------------------------------------------------------------
// Model variants.

enum class VariantKind { unconstrained, static_limit, surrogate };

/// M0 (no transfer constraint), M-S (static tie-line limits), M1 (elastic net),
/// M2 (single hidden layer), M3-L / M4-L (L hidden layers, sigmoid / softplus).
struct Variant {
    std::string tag = "M0";
    VariantKind kind = VariantKind::unconstrained;
    surrogate::Family family = surrogate::Family::elastic_net;
    surrogate::Activation activation = surrogate::Activation::sigmoid;
    int hidden_layers = 0;

    /// Throws std::invalid_argument on an unknown tag.
    static Variant parse(const std::string& tag);
    /// Throws surrogate::ModelMismatch when the model does not fit the tag.
    void check_model(const surrogate::SurrogateModel& m) const;
};

struct PlannerConfig {
    Variant variant;
    double margin = 0.05;  // tie-line security margin, p.u.
    std::shared_ptr<const surrogate::SurrogateModel> model;
    std::vector<double> static_limits;  // M-S: one limit per tie-line, p.u.
    ipm::IpmOptions ipm;
    std::vector<double> retry_sigma{0.3, 0.5};  // centring values tried in turn after a stalled solve
    double vg_min = 0.97;  // generator-bus voltage band, matching the sampled setpoints
    double vg_max = 1.05;
    double cost_scale = 1e-3;  // objective is solved in k$
    std::string trace_dir;     // per-solve IPM traces when non-empty

    void validate(const grid::NetworkCase& c) const;
};

// ---------------------------------------------------------------------------
// Per-period decision layout: [P_g, Q_g, curtailment, P_ess, E_ess, V, theta].

struct PeriodLayout {
    Eigen::Index generators = 0, farms = 0, units = 0, buses = 0;

    static PeriodLayout of(const grid::NetworkCase& c);
    Eigen::Index size() const { return 2 * generators + farms + 2 * units + 2 * buses; }
    Eigen::Index pg(std::size_t g) const { return static_cast<Eigen::Index>(g); }
    Eigen::Index qg(std::size_t g) const { return generators + static_cast<Eigen::Index>(g); }
    Eigen::Index curtail(std::size_t w) const { return 2 * generators + static_cast<Eigen::Index>(w); }
    Eigen::Index pe(std::size_t e) const { return 2 * generators + farms + static_cast<Eigen::Index>(e); }
    Eigen::Index ee(std::size_t e) const { return 2 * generators + farms + units + static_cast<Eigen::Index>(e); }
    Eigen::Index vm(std::size_t i) const { return 2 * generators + farms + 2 * units + static_cast<Eigen::Index>(i); }
    Eigen::Index va(std::size_t i) const { return vm(0) + buses + static_cast<Eigen::Index>(i); }
    std::vector<std::string> names(const grid::NetworkCase& c) const;
};

/// Loads and wind forecast of one period, p.u.
struct PeriodForecast {
    std::vector<double> load_p, load_q, wind;
    static PeriodForecast of(const Scenario& s, std::size_t period);
};

/// Surrogate input k = offset_k + coef_k * x[var_k] (var_k < 0 for constants).
struct FeatureMap {
    std::vector<Eigen::Index> var;
    Eigen::VectorXd coef, offset;

    static FeatureMap build(const grid::NetworkCase& c, const PeriodLayout& layout, const PeriodForecast& f);
    Eigen::VectorXd apply(const Eigen::VectorXd& x_period) const;
};

/// The model composed with the feature map: an equivalent network whose inputs
/// are the period variables the features depend on, so derivatives come out
/// directly in decision space.
struct ReducedSurrogate {
    surrogate::SurrogateModel model;
    std::vector<Eigen::Index> vars;  // period variable of each reduced input

    static ReducedSurrogate build(const surrogate::SurrogateModel& m, const FeatureMap& f);
    Eigen::VectorXd gather(const Eigen::VectorXd& x_period) const;
};

/// Branch end whose active flow is the tie-line's transfer.
grid::BranchEnd tie_end(const grid::NetworkCase& c, const grid::TieLine& tie);

struct MarginEval {
    double value = 0.0;  // flow - estimated TTC
    double flow = 0.0;
    double gamma = 0.0;
    Eigen::VectorXd gradient;  // over the period layout
    Eigen::MatrixXd hessian;   // empty unless requested
};

/// Margin of one tie-line in one period, with exact derivatives in the period variables.
MarginEval surrogate_margin(const grid::NetworkCase& c, const PeriodLayout& layout, const ReducedSurrogate& s,
                            const Eigen::VectorXd& x_period, std::size_t tie, bool with_hessian = true);

/// Variables ordered by decreasing |gradient|.
std::vector<std::pair<std::string, double>> rank_sensitivities(const std::vector<std::string>& names,
                                                               const Eigen::VectorXd& gradient);

// ---------------------------------------------------------------------------
// The horizon problem.

struct InitialCondition {
    std::vector<double> pg;      // previous-period dispatch; empty = no ramp coupling for the first period
    std::vector<double> energy;  // stored energy before the first period, p.u.*h
    std::optional<grid::OperatingPoint> guess;
};

/// Extra linear row  lower <= coef . x_period <= upper  on one period.
struct LinearCut {
    int period = 0;
    Eigen::VectorXd coef;
    double lower = -ipm::kInf;
    double upper = 0.0;
    std::string label;
};

struct Census {
    Eigen::Index variables = 0, equalities = 0, inequalities = 0;
    nlohmann::json breakdown;
};

/// Closed-form size of the horizon problem.
Census census(const grid::NetworkCase& c, int horizon, const Variant& variant, std::size_t cuts = 0);

class BuildError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class PlanningProblem : public ipm::NlpProblem {
  public:
    PlanningProblem(const grid::NetworkCase& c, std::vector<PeriodForecast> forecasts, InitialCondition init,
                    PlannerConfig config, std::vector<LinearCut> cuts = {}, double period_hours = 1.0);

    Eigen::Index variables() const override { return layout_.size() * horizon(); }
    Eigen::Index equalities() const override { return m_; }
    Eigen::Index inequalities() const override { return static_cast<Eigen::Index>(lower_.size()); }
    Eigen::VectorXd g_lower() const override { return lower_; }
    Eigen::VectorXd g_upper() const override { return upper_; }
    double objective(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd equality(const Eigen::VectorXd& x) const override;
    ipm::SparseMatrix equality_jacobian(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd inequality(const Eigen::VectorXd& x) const override;
    ipm::SparseMatrix inequality_jacobian(const Eigen::VectorXd& x) const override;
    ipm::SparseMatrix lagrangian_hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& eq_weights,
                                         const Eigen::VectorXd& ineq_weights) const override;

    int horizon() const { return static_cast<int>(forecasts_.size()); }
    const PeriodLayout& layout() const { return layout_; }
    const grid::NetworkCase& network() const { return case_; }
    const PeriodForecast& forecast(int t) const { return forecasts_.at(static_cast<std::size_t>(t)); }
    double period_hours() const { return dt_; }
    Eigen::Index offset(int t) const { return layout_.size() * t; }
    Eigen::VectorXd period(const Eigen::VectorXd& x, int t) const { return x.segment(offset(t), layout_.size()); }
    /// Start point built from the initial guess (or a flat profile) in every period.
    Eigen::VectorXd initial_guess() const;
    /// Generation plus curtailment cost of one period, $.
    double period_cost(const Eigen::VectorXd& x, int t) const;
    /// Index of the first margin/static row of period t (tie-lines follow in case order), or -1.
    Eigen::Index security_row(int t) const;
    const std::vector<std::string>& inequality_labels() const { return labels_; }
    const ReducedSurrogate* surrogate(int t) const;

  private:
    grid::NetworkCase case_;
    std::vector<PeriodForecast> forecasts_;
    InitialCondition init_;
    PlannerConfig config_;
    std::vector<LinearCut> cuts_;
    double dt_;
    PeriodLayout layout_;
    std::vector<grid::BranchEnd> from_ends_, to_ends_, tie_ends_;
    std::vector<std::size_t> gen_bus_, farm_bus_, unit_bus_;
    std::size_t slack_ = 0;
    std::vector<ReducedSurrogate> reduced_;
    Eigen::Index m_ = 0;
    Eigen::VectorXd lower_, upper_;
    std::vector<std::string> labels_;
    std::vector<Eigen::Index> security_rows_;

    enum class RowKind { variable, line, ramp, margin, static_flow, cut };
    struct Row {
        RowKind kind;
        int period;
        Eigen::Index index;  // variable (global), line, generator, tie or cut
    };
    std::vector<Row> rows_;
};

// ---------------------------------------------------------------------------
// Plans.

struct PeriodPlan {
    int hour = 0;
    std::vector<double> pg, qg, pw, curtail, pe, ee, vm, va;
    std::vector<double> tie_flow, gamma_hat, margin_hat;  // estimates empty without a model
    double cost = 0.0;  // $
    bool security_active = false;

    grid::OperatingPoint point() const;
    nlohmann::json to_json() const;
    static PeriodPlan from_json(const nlohmann::json& j);
};

struct StepLog {
    int hour = 0;
    std::string status;
    int iterations = 0;
    double seconds = 0.0;
    double objective = 0.0;
};

struct DispatchPlan {
    std::string variant;
    std::string status = "ok";  // ok | partial
    std::string message;
    double margin = 0.05;
    std::vector<std::string> tie_lines;
    std::vector<PeriodPlan> periods;
    std::vector<StepLog> steps;
    nlohmann::json manifest;

    double total_cost() const;
    bool ok() const { return status == "ok"; }
    nlohmann::json to_json() const;
    static DispatchPlan from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& json_path) const;
    static DispatchPlan load(const std::filesystem::path& json_path);
    void write_csv(const std::filesystem::path& path, const grid::NetworkCase& c) const;
};

/// Decodes period t of a solution.
PeriodPlan decode_period(const PlanningProblem& p, const Eigen::VectorXd& x, int t, int hour);

struct SolveOutcome {
    ipm::Result result;
    Eigen::VectorXd x;
    int attempts = 0;
};

/// Solves the horizon problem for the forecasts of `first_period` onwards,
/// re-solving with the retry centring values when the iteration cap is hit.
SolveOutcome solve_horizon(const grid::NetworkCase& c, const Scenario& s, std::size_t first_period, int horizon,
                           const InitialCondition& init, const PlannerConfig& config,
                           const std::vector<LinearCut>& cuts = {}, const Eigen::VectorXd* warm = nullptr);

/// Economic dispatch of the hour before the interval, shared by all variants.
InitialCondition initial_condition(const grid::NetworkCase& c, const Scenario& s, const PlannerConfig& config);

using Progress = std::function<void(const StepLog&)>;

/// Rolling horizon over the scenario's committed interval.
DispatchPlan run_mpc(const grid::NetworkCase& c, const Scenario& s, const PlannerConfig& config,
                     const Progress& progress = {});

// ---------------------------------------------------------------------------
// Verification and the corrective baseline.

struct ContingencyVerdict {
    std::string id;
    bool stable = false;
    double max_angle_deg = 0.0;
};

struct PeriodSecurity {
    int hour = 0;
    bool power_flow = false;
    std::string static_violation;  // empty when static limits hold
    double lambda = 0.0;
    std::vector<double> flow, gamma, eta, gamma_hat;
    std::vector<ContingencyVerdict> contingencies;
    bool transient_stable = true;
    bool ttc_violated = false;  // some flow above its true TTC
    bool margin_met = true;     // eta <= -margin on every tie-line

    nlohmann::json to_json() const;
};

struct SecurityReport {
    std::string variant;
    double margin = 0.05;
    std::vector<std::string> tie_lines;
    std::vector<PeriodSecurity> periods;

    int ttc_violations() const;
    int transient_failures() const;
    int static_failures() const;
    bool secure() const { return ttc_violations() == 0 && transient_failures() == 0 && static_failures() == 0; }
    nlohmann::json to_json() const;
    void write_csv(const std::filesystem::path& path) const;
};

/// The case of one plan period: forecast loads, dispatched wind and storage.
grid::NetworkCase period_case(const grid::NetworkCase& c, const Scenario& s, const PeriodPlan& p);

/// True TTC per committed period, transient simulation of every contingency
/// at the plan's operating point, and the surrogate estimate when a model is given.
SecurityReport verify_plan(const DispatchPlan& plan, const grid::NetworkCase& c, const Scenario& s,
                           const ttc::TtcSearchConfig& ttc_config, const surrogate::SurrogateModel* model = nullptr,
                           int jobs = 1);

/// Static-only TTC of the initial condition's point: the optimistic limits used by M-S.
std::vector<double> static_limits(const grid::NetworkCase& c, const Scenario& s, const InitialCondition& init,
                                  const ttc::TtcSearchConfig& ttc_config);

struct CcmConfig {
    double perturbation = 0.01;  // p.u., central differences
    int max_iterations = 10;
    double ttc_tolerance = 1e-4;  // bisection tolerance for sensitivity runs
    double flow_step = 0.1;       // p.u. tie-flow reduction per round while the TTC is undefined
    double overshoot = 0.002;     // p.u. the cuts aim beyond the margin
};

struct CcmPeriodLog {
    int hour = 0;
    int iterations = 0;
    bool secure = false;
    std::vector<double> eta_before, eta_after;
    std::vector<std::vector<double>> rounds;  // eta after each re-dispatch
    std::string solver = "not run";           // status of the last re-dispatch
};

struct CcmResult {
    DispatchPlan plan;
    std::vector<CcmPeriodLog> log;
    bool secure() const;
};

/// Re-dispatches each insecure committed period of an M0 plan with linear
/// cuts from perturb-and-recompute margin sensitivities.
CcmResult run_ccm(const grid::NetworkCase& c, const Scenario& s, const DispatchPlan& baseline,
                  const ttc::TtcSearchConfig& ttc_config, const PlannerConfig& config, const CcmConfig& ccm = {},
                  const Progress& progress = {});

}  // namespace tcop::planner
