#include "tcop/ipm/ipm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/SparseCholesky>

namespace tcop::ipm {

namespace {

using Eigen::Index;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

bool finite(const VectorXd& v) { return v.allFinite(); }

bool finite(const SparseMatrix& m) {
    for (Index k = 0; k < m.nonZeros(); ++k) {
        if (!std::isfinite(m.valuePtr()[k])) return false;
    }
    return true;
}

class CallbackError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

template <class T>
T checked(T v, const char* what) {
    if (!finite(v)) throw CallbackError(std::string("non-finite ") + what);
    return v;
}

double inf_norm(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

double masked_inf_norm(const VectorXd& v, const std::vector<bool>& mask) {
    double out = 0.0;
    for (Index i = 0; i < v.size(); ++i) {
        if (mask[i]) out = std::max(out, std::abs(v[i]));
    }
    return out;
}

VectorXd masked(const VectorXd& v, const std::vector<bool>& mask) {
    VectorXd out = VectorXd::Zero(v.size());
    for (Index i = 0; i < v.size(); ++i) {
        if (mask[i]) out[i] = v[i];
    }
    return out;
}

}  // namespace

void NlpProblem::validate() const {
    const Index n = variables(), m = equalities(), r = inequalities();
    if (n < 1) throw std::invalid_argument("problem has no variables");
    if (m < 0 || r < 0) throw std::invalid_argument("negative constraint count");
    if (m > n) throw std::invalid_argument("more equalities than variables");
    const VectorXd lo = g_lower(), up = g_upper();
    if (lo.size() != r || up.size() != r) throw std::invalid_argument("inequality bounds do not match the inequality count");
    for (Index j = 0; j < r; ++j) {
        if (std::isnan(lo[j]) || std::isnan(up[j])) throw std::invalid_argument("NaN inequality bound");
        if (!(lo[j] < up[j])) {
            throw std::invalid_argument("inequality " + std::to_string(j) +
                                        " has lower bound >= upper bound; state equal bounds as an equality");
        }
    }
}

VectorXd FunctionProblem::equality(const VectorXd& x) const { return h ? h(x) : VectorXd::Zero(m); }
SparseMatrix FunctionProblem::equality_jacobian(const VectorXd& x) const { return dh ? dh(x) : SparseMatrix(m, n); }
VectorXd FunctionProblem::inequality(const VectorXd& x) const { return g ? g(x) : VectorXd::Zero(r); }
SparseMatrix FunctionProblem::inequality_jacobian(const VectorXd& x) const { return dg ? dg(x) : SparseMatrix(r, n); }

FunctionProblem quadratic_program(const Eigen::MatrixXd& q, const VectorXd& c, const Eigen::MatrixXd& a, const VectorXd& b,
                                  const Eigen::MatrixXd& g, const VectorXd& lo, const VectorXd& hi) {
    const Index n = c.size();
    if (q.rows() != n || q.cols() != n) throw std::invalid_argument("Q must be n x n");
    if (a.cols() != n && a.size() != 0) throw std::invalid_argument("A must have n columns");
    if (g.cols() != n && g.size() != 0) throw std::invalid_argument("G must have n columns");
    if (a.rows() != b.size() || g.rows() != lo.size() || g.rows() != hi.size()) {
        throw std::invalid_argument("constraint blocks and right-hand sides differ in size");
    }
    FunctionProblem p;
    p.n = n;
    p.m = a.rows();
    p.r = g.rows();
    p.lower = lo;
    p.upper = hi;
    const SparseMatrix qs = (0.5 * (q + q.transpose())).sparseView();
    const SparseMatrix as = a.sparseView(), gs = g.sparseView();
    p.f = [qs, c](const VectorXd& x) { return 0.5 * x.dot(qs * x) + c.dot(x); };
    p.df = [qs, c](const VectorXd& x) -> VectorXd { return qs * x + c; };
    p.h = [as, b](const VectorXd& x) -> VectorXd { return as * x - b; };
    p.dh = [as](const VectorXd&) { return as; };
    p.g = [gs](const VectorXd& x) -> VectorXd { return gs * x; };
    p.dg = [gs](const VectorXd&) { return gs; };
    p.hess = [qs](const VectorXd&, const VectorXd&, const VectorXd&) { return qs; };
    return p;
}

void IpmOptions::validate() const {
    if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("sigma must lie in (0, 1)");
    if (!(step_factor > 0.0 && step_factor < 1.0)) throw std::invalid_argument("step factor must lie in (0, 1)");
    if (!(gap_tolerance > 0.0) || !(feasibility_tolerance > 0.0) || !(stationarity_tolerance > 0.0)) {
        throw std::invalid_argument("tolerances must be positive");
    }
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be positive");
    if (!(mu0 > 0.0) || !(slack_margin > 0.0)) throw std::invalid_argument("mu0 and slack margin must be positive");
    if (!(regularization_start > 0.0)) throw std::invalid_argument("regularization start must be positive");
}

double KktState::gap(const std::vector<bool>& has_lower, const std::vector<bool>& has_upper) const {
    double out = 0.0;
    for (Index j = 0; j < l.size(); ++j) {
        if (has_lower[j]) out += l[j] * z[j];
        if (has_upper[j]) out += u[j] * w[j];
    }
    return out;
}

Index Sides::count() const {
    return std::count(lower.begin(), lower.end(), true) + std::count(upper.begin(), upper.end(), true);
}

Sides Sides::of(const NlpProblem& p) {
    const VectorXd lo = p.g_lower(), up = p.g_upper();
    Sides s;
    for (Index j = 0; j < lo.size(); ++j) {
        s.lower.push_back(std::isfinite(lo[j]));
        s.upper.push_back(std::isfinite(up[j]));
    }
    return s;
}

Residuals residuals(const NlpProblem& p, const KktState& s, const Sides& sides) {
    const VectorXd g = checked(p.inequality(s.x), "inequality");
    const SparseMatrix a = checked(p.equality_jacobian(s.x), "equality Jacobian");
    const SparseMatrix j = checked(p.inequality_jacobian(s.x), "inequality Jacobian");
    const VectorXd lo = p.g_lower(), up = p.g_upper();
    Residuals r;
    r.stationarity = checked(p.objective_gradient(s.x), "objective gradient");
    if (a.rows()) r.stationarity -= a.transpose() * s.y;
    if (j.rows()) r.stationarity -= j.transpose() * (masked(s.z, sides.lower) - masked(s.w, sides.upper));
    r.equality = checked(p.equality(s.x), "equality");
    r.lower = VectorXd::Zero(g.size());
    r.upper = VectorXd::Zero(g.size());
    for (Index k = 0; k < g.size(); ++k) {
        if (sides.lower[k]) r.lower[k] = g[k] - s.l[k] - lo[k];
        if (sides.upper[k]) r.upper[k] = g[k] + s.u[k] - up[k];
    }
    return r;
}

Step newton_step(const NlpProblem& p, const KktState& s, const Sides& sides, const IpmOptions& options) {
    const Index n = p.variables(), m = p.equalities(), r = p.inequalities();
    const Residuals res = residuals(p, s, sides);
    const SparseMatrix a = p.equality_jacobian(s.x);
    const SparseMatrix j = p.inequality_jacobian(s.x);
    const VectorXd zl = masked(s.z, sides.lower), wu = masked(s.w, sides.upper);
    const SparseMatrix w = checked(p.lagrangian_hessian(s.x, -s.y, wu - zl), "Lagrangian Hessian");
    if (w.rows() != n || w.cols() != n) throw std::invalid_argument("Lagrangian Hessian has the wrong shape");

    VectorXd d = VectorXd::Zero(r), q = VectorXd::Zero(r);
    for (Index k = 0; k < r; ++k) {
        if (sides.lower[k]) {
            d[k] += s.z[k] / s.l[k];
            q[k] += (s.mu - s.l[k] * s.z[k]) / s.l[k] - s.z[k] / s.l[k] * res.lower[k];
        }
        if (sides.upper[k]) {
            d[k] += s.w[k] / s.u[k];
            q[k] -= (s.mu - s.u[k] * s.w[k]) / s.u[k] + s.w[k] / s.u[k] * res.upper[k];
        }
    }
    SparseMatrix k = w;
    if (r) k += SparseMatrix(j.transpose() * d.asDiagonal() * j);

    VectorXd rhs(n + m);
    rhs.head(n) = -res.stationarity;
    if (r) rhs.head(n) += j.transpose() * q;
    rhs.tail(m) = -res.equality;

    // Lower triangle of [[K + dw I, A'], [A, -dc I]].
    const double dc = m ? 1e-10 : 0.0;
    std::vector<Triplet> base;
    base.reserve(k.nonZeros() + a.nonZeros() + n + m);
    for (Index col = 0; col < k.outerSize(); ++col) {
        for (SparseMatrix::InnerIterator it(k, col); it; ++it) {
            if (it.row() >= it.col()) base.emplace_back(it.row(), it.col(), it.value());
        }
    }
    for (Index col = 0; col < a.outerSize(); ++col) {
        for (SparseMatrix::InnerIterator it(a, col); it; ++it) base.emplace_back(n + it.row(), it.col(), it.value());
    }
    for (Index i = 0; i < m; ++i) base.emplace_back(n + i, n + i, -dc);

    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    SparseMatrix kkt(n + m, n + m);
    double dw = 0.0;
    bool ok = false;
    while (true) {
        auto trips = base;
        for (Index i = 0; i < n; ++i) trips.emplace_back(i, i, dw);
        kkt.setFromTriplets(trips.begin(), trips.end());
        ldlt.compute(kkt);
        if (ldlt.info() == Eigen::Success) {
            const VectorXd piv = ldlt.vectorD();
            const Index pos = (piv.array() > 0.0).count(), neg = (piv.array() < 0.0).count();
            ok = piv.allFinite() && pos == n && neg == m;
        }
        if (ok) break;
        dw = dw == 0.0 ? options.regularization_start : dw * 10.0;
        if (dw > options.regularization_max) throw FactorizationFailed("inertia correction exceeded its limit");
    }

    // Refine against the system without the constraint-block perturbation.
    auto apply = [&](const VectorXd& v) -> VectorXd {
        VectorXd out = kkt.selfadjointView<Eigen::Lower>() * v;
        out.tail(m) += dc * v.tail(m);
        return out;
    };
    VectorXd sol = ldlt.solve(rhs);
    const double scale = std::max(1.0, inf_norm(rhs));
    double rel = inf_norm(rhs - apply(sol)) / scale;
    for (int pass = 0; pass < 5 && rel > 1e-13; ++pass) {
        sol += ldlt.solve(rhs - apply(sol));
        rel = inf_norm(rhs - apply(sol)) / scale;
    }
    if (!sol.allFinite()) throw FactorizationFailed("non-finite Newton direction");

    Step st;
    st.regularization = dw;
    st.residual = rel;
    st.dx = sol.head(n);
    st.dy = -sol.tail(m);
    const VectorXd jdx = r ? VectorXd(j * st.dx) : VectorXd();
    st.dl = VectorXd::Zero(r);
    st.du = VectorXd::Zero(r);
    st.dz = VectorXd::Zero(r);
    st.dw = VectorXd::Zero(r);
    for (Index i = 0; i < r; ++i) {
        if (sides.lower[i]) {
            st.dl[i] = jdx[i] + res.lower[i];
            st.dz[i] = (s.mu - s.l[i] * s.z[i] - s.z[i] * st.dl[i]) / s.l[i];
        }
        if (sides.upper[i]) {
            st.du[i] = -res.upper[i] - jdx[i];
            st.dw[i] = (s.mu - s.u[i] * s.w[i] - s.w[i] * st.du[i]) / s.u[i];
        }
    }
    return st;
}

StepLengths step_lengths(const KktState& s, const Step& d, const Sides& sides, double factor) {
    double primal = kInf, dual = kInf;
    for (Index i = 0; i < s.l.size(); ++i) {
        if (sides.lower[i]) {
            if (d.dl[i] < 0.0) primal = std::min(primal, -s.l[i] / d.dl[i]);
            if (d.dz[i] < 0.0) dual = std::min(dual, -s.z[i] / d.dz[i]);
        }
        if (sides.upper[i]) {
            if (d.du[i] < 0.0) primal = std::min(primal, -s.u[i] / d.du[i]);
            if (d.dw[i] < 0.0) dual = std::min(dual, -s.w[i] / d.dw[i]);
        }
    }
    return {std::min(factor * primal, 1.0), std::min(factor * dual, 1.0)};
}

double update_barrier(double gap, Index sides, double sigma) {
    if (sides <= 0) return 1e-14;
    return std::max(sigma * gap / static_cast<double>(sides), 1e-14);
}

KktState initial_state(const NlpProblem& p, const VectorXd& x0, const Sides& sides, const IpmOptions& options) {
    const Index r = p.inequalities();
    const VectorXd g = checked(p.inequality(x0), "inequality");
    const VectorXd lo = p.g_lower(), up = p.g_upper();
    KktState s;
    s.x = x0;
    s.y = VectorXd::Zero(p.equalities());
    s.l = VectorXd::Ones(r);
    s.u = VectorXd::Ones(r);
    s.z = VectorXd::Ones(r);
    s.w = VectorXd::Ones(r);
    s.mu = options.mu0;
    for (Index j = 0; j < r; ++j) {
        if (sides.lower[j]) {
            s.l[j] = std::max(g[j] - lo[j], options.slack_margin);
            s.z[j] = options.mu0 / s.l[j];
        }
        if (sides.upper[j]) {
            s.u[j] = std::max(up[j] - g[j], options.slack_margin);
            s.w[j] = options.mu0 / s.u[j];
        }
    }
    return s;
}

std::string to_string(Status s) {
    switch (s) {
        case Status::converged: return "converged";
        case Status::max_iterations: return "max-iterations";
        case Status::factorization_failed: return "factorization-failed";
        case Status::callback_error: return "callback-error";
    }
    return "unknown";
}

Result solve(const NlpProblem& p, const VectorXd& x0, const IpmOptions& options) {
    p.validate();
    options.validate();
    if (x0.size() != p.variables()) throw std::invalid_argument("starting point has the wrong dimension");

    Result out;
    std::ofstream trace;
    if (!options.trace_path.empty()) {
        trace.open(options.trace_path);
        if (!trace) throw std::runtime_error("cannot write trace " + options.trace_path);
        trace << "iteration,gap,mu,alpha_primal,alpha_dual,feasibility,stationarity,objective,regularization\n";
        trace.precision(12);
    }
    const Sides sides = Sides::of(p);
    const Index count = sides.count();

    auto finish = [&](const KktState& s, Status status) {
        out.status = status;
        out.x = s.x;
        out.y = s.y;
        out.z = masked(s.z, sides.lower);
        out.w = masked(s.w, sides.upper);
        out.l = s.l;
        out.u = s.u;
        out.gap = s.gap(sides.lower, sides.upper);
        try {
            out.objective = p.objective(s.x);
        } catch (const std::exception&) {
            out.objective = std::numeric_limits<double>::quiet_NaN();
        }
        return out;
    };

    KktState s;
    try {
        s = initial_state(p, x0, sides, options);
    } catch (const CallbackError& e) {
        out.message = e.what();
        out.status = Status::callback_error;
        out.x = x0;
        return out;
    }

    double last_alpha_p = 0.0, last_alpha_d = 0.0, last_reg = 0.0;
    KktState best = s;
    double best_merit = kInf, best_feas = 0.0, best_stat = 0.0;
    int best_iteration = 0;
    for (int it = 0;; ++it) {
        Residuals res;
        double objective = 0.0;
        try {
            res = residuals(p, s, sides);
            objective = p.objective(s.x);
            if (!std::isfinite(objective)) throw CallbackError("non-finite objective");
        } catch (const CallbackError& e) {
            out.message = e.what();
            return finish(s, Status::callback_error);
        }
        const double gap = s.gap(sides.lower, sides.upper);
        const double feas = std::max({inf_norm(res.equality), masked_inf_norm(res.lower, sides.lower),
                                      masked_inf_norm(res.upper, sides.upper)});
        const double grad = inf_norm(p.objective_gradient(s.x));
        const double stat = inf_norm(res.stationarity) / (1.0 + grad);
        out.gap_history.push_back(gap);
        out.log.push_back({it, gap, s.mu, last_alpha_p, last_alpha_d, feas, stat, objective, last_reg});
        if (trace) {
            trace << it << ',' << gap << ',' << s.mu << ',' << last_alpha_p << ',' << last_alpha_d << ',' << feas << ','
                  << stat << ',' << objective << ',' << last_reg << '\n';
        }
        out.iterations = it;
        out.feasibility = feas;
        out.stationarity = stat;
        if (gap < options.gap_tolerance && feas <= options.feasibility_tolerance &&
            stat <= options.stationarity_tolerance) {
            return finish(s, Status::converged);
        }
        const double merit = std::max({gap, feas, stat});
        if (merit < best_merit) {
            best = s;
            best_merit = merit;
            best_feas = feas;
            best_stat = stat;
            best_iteration = it;
        }
        if (it >= options.max_iterations) {
            out.message = "iteration limit reached; returning iterate " + std::to_string(best_iteration);
            out.feasibility = best_feas;
            out.stationarity = best_stat;
            return finish(best, Status::max_iterations);
        }

        Step d;
        try {
            d = newton_step(p, s, sides, options);
        } catch (const FactorizationFailed& e) {
            out.message = e.what();
            return finish(s, Status::factorization_failed);
        } catch (const CallbackError& e) {
            out.message = e.what();
            return finish(s, Status::callback_error);
        }
        const auto alpha = step_lengths(s, d, sides, options.step_factor);
        s.x += alpha.primal * d.dx;
        s.l += alpha.primal * d.dl;
        s.u += alpha.primal * d.du;
        s.y += alpha.dual * d.dy;
        s.z += alpha.dual * d.dz;
        s.w += alpha.dual * d.dw;
        for (Index j = 0; j < s.l.size(); ++j) {
            if (!(s.l[j] > 0.0 && s.u[j] > 0.0 && s.z[j] > 0.0 && s.w[j] > 0.0)) {
                throw std::logic_error("interior point left the positive orthant");
            }
        }
        s.mu = update_barrier(s.gap(sides.lower, sides.upper), count, options.sigma);
        last_alpha_p = alpha.primal;
        last_alpha_d = alpha.dual;
        last_reg = d.regularization;
    }
}

}  // namespace tcop::ipm
