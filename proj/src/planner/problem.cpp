#include <algorithm>
#include <cmath>
#include <map>

#include "tcop/planner/planner.hpp"

namespace tcop::planner {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

namespace {

constexpr double kMw = grid::kBaseMva;

// Upper bound of a curtailment variable; a zero forecast still needs an interior.
double curtail_upper(double forecast) { return std::max(forecast, 1e-7); }

}  // namespace

// ---------------------------------------------------------------------------

Variant Variant::parse(const std::string& tag) {
    Variant v;
    v.tag = tag;
    if (tag == "M0") return v;
    if (tag == "M-S") {
        v.kind = VariantKind::static_limit;
        return v;
    }
    v.kind = VariantKind::surrogate;
    if (tag == "M1") return v;
    if (tag == "M2") {
        v.family = surrogate::Family::slnn;
        v.hidden_layers = 1;
        return v;
    }
    if (tag.size() >= 4 && (tag.rfind("M3-", 0) == 0 || tag.rfind("M4-", 0) == 0)) {
        const std::string depth = tag.substr(3);
        if (!depth.empty() && std::all_of(depth.begin(), depth.end(), ::isdigit) && depth.size() < 3) {
            v.family = surrogate::Family::dlnn;
            v.hidden_layers = std::stoi(depth);
            v.activation = tag[1] == '3' ? surrogate::Activation::sigmoid : surrogate::Activation::softplus;
            if (v.hidden_layers >= 2) return v;
        }
    }
    throw std::invalid_argument("unknown model variant '" + tag + "' (expected M0, M-S, M1, M2, M3-L or M4-L)");
}

void Variant::check_model(const surrogate::SurrogateModel& m) const {
    if (kind != VariantKind::surrogate) return;
    if (m.family != family) {
        throw surrogate::ModelMismatch(tag + " needs a " + surrogate::to_string(family) + " model, got " +
                                       surrogate::to_string(m.family));
    }
    if (static_cast<int>(m.hidden_layers()) != hidden_layers) {
        throw surrogate::ModelMismatch(tag + " needs " + std::to_string(hidden_layers) + " hidden layers, model has " +
                                       std::to_string(m.hidden_layers()));
    }
    if (family == surrogate::Family::dlnn && m.activation != activation) {
        throw surrogate::ModelMismatch(tag + " needs " + surrogate::to_string(activation) + " activations");
    }
}

void PlannerConfig::validate(const grid::NetworkCase& c) const {
    if (!(margin >= 0.0)) throw std::invalid_argument("security margin must be nonnegative");
    if (!(vg_min < vg_max)) throw std::invalid_argument("generator voltage band is empty");
    if (!(cost_scale > 0.0)) throw std::invalid_argument("cost scale must be positive");
    for (double v : retry_sigma) {
        if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("retry centring values must lie in (0, 1)");
    }
    if ((variant.kind == VariantKind::surrogate) != static_cast<bool>(model)) {
        throw std::invalid_argument(variant.kind == VariantKind::surrogate
                                        ? "variant " + variant.tag + " needs a surrogate model"
                                        : "variant " + variant.tag + " takes no surrogate model");
    }
    if (model) {
        variant.check_model(*model);
        const auto layout = dataset::FeatureLayout::of(c);
        model->check_layout(layout.hash(), layout.size());
        if (model->outputs() != c.tie_lines.size()) throw surrogate::ModelMismatch("model outputs do not match the tie-lines");
        if (!model->target_names.empty()) {
            for (std::size_t k = 0; k < c.tie_lines.size(); ++k) {
                if (model->target_names[k] != c.tie_lines[k].line_id) {
                    throw surrogate::ModelMismatch("model output " + std::to_string(k) + " is " + model->target_names[k] +
                                                   ", case tie-line is " + c.tie_lines[k].line_id);
                }
            }
        }
    }
    if (variant.kind == VariantKind::static_limit && static_limits.size() != c.tie_lines.size()) {
        throw std::invalid_argument("M-S needs one static limit per tie-line");
    }
    ipm.validate();
}

// ---------------------------------------------------------------------------

PeriodLayout PeriodLayout::of(const grid::NetworkCase& c) {
    PeriodLayout l;
    l.generators = static_cast<Index>(c.generators.size());
    l.farms = static_cast<Index>(c.wind_farms.size());
    l.units = static_cast<Index>(c.storage.size());
    l.buses = static_cast<Index>(c.buses.size());
    return l;
}

std::vector<std::string> PeriodLayout::names(const grid::NetworkCase& c) const {
    std::vector<std::string> out(static_cast<std::size_t>(size()));
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        out[pg(g)] = "P_g:" + c.generators[g].id;
        out[qg(g)] = "Q_g:" + c.generators[g].id;
    }
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) out[curtail(w)] = "curtail:" + c.wind_farms[w].id;
    for (std::size_t e = 0; e < c.storage.size(); ++e) {
        out[pe(e)] = "P_ess:" + c.storage[e].id;
        out[ee(e)] = "E_ess:" + c.storage[e].id;
    }
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        out[vm(i)] = "V:" + std::to_string(c.buses[i].id);
        out[va(i)] = "theta:" + std::to_string(c.buses[i].id);
    }
    return out;
}

PeriodForecast PeriodForecast::of(const Scenario& s, std::size_t period) {
    if (period >= s.periods()) throw std::out_of_range("forecast period out of range");
    return {s.load_p[period], s.load_q[period], s.wind[period]};
}

FeatureMap FeatureMap::build(const grid::NetworkCase& c, const PeriodLayout& layout, const PeriodForecast& f) {
    using dataset::FeatureKind;
    using dataset::UnitKind;
    const auto fl = dataset::FeatureLayout::of(c);
    FeatureMap m;
    const auto n = static_cast<Index>(fl.size());
    m.var.assign(fl.size(), -1);
    m.coef = VectorXd::Zero(n);
    m.offset = VectorXd::Zero(n);
    for (std::size_t k = 0; k < fl.size(); ++k) {
        const auto& s = fl.slots[k];
        auto set = [&](Index var, double coef, double offset) {
            m.var[k] = var;
            m.coef[static_cast<Index>(k)] = coef;
            m.offset[static_cast<Index>(k)] = offset;
        };
        switch (s.kind) {
            case FeatureKind::p_injection:
                if (s.unit == UnitKind::generator) set(layout.pg(s.index), 1.0, 0.0);
                else if (s.unit == UnitKind::wind) set(layout.curtail(s.index), -1.0, f.wind[s.index]);
                else set(layout.pe(s.index), 1.0, 0.0);
                break;
            case FeatureKind::q_injection:
                if (s.unit == UnitKind::generator) set(layout.qg(s.index), 1.0, 0.0);
                break;
            case FeatureKind::v_setpoint: set(layout.vm(c.bus_index(c.generators[s.index].bus)), 1.0, 0.0); break;
            case FeatureKind::p_load: set(-1, 0.0, f.load_p[s.index]); break;
            case FeatureKind::q_load: set(-1, 0.0, f.load_q[s.index]); break;
            case FeatureKind::v_bus: set(layout.vm(s.index), 1.0, 0.0); break;
        }
    }
    return m;
}

VectorXd FeatureMap::apply(const VectorXd& x) const {
    VectorXd out = offset;
    for (std::size_t k = 0; k < var.size(); ++k) {
        if (var[k] >= 0) out[static_cast<Index>(k)] += coef[static_cast<Index>(k)] * x[var[k]];
    }
    return out;
}

ReducedSurrogate ReducedSurrogate::build(const surrogate::SurrogateModel& m, const FeatureMap& f) {
    if (m.inputs() != f.var.size()) {
        throw surrogate::ModelMismatch("model expects " + std::to_string(m.inputs()) + " features, the map gives " +
                                       std::to_string(f.var.size()));
    }
    ReducedSurrogate r;
    std::map<Index, Index> column;
    for (Index v : f.var) {
        if (v >= 0) column.emplace(v, 0);
    }
    for (auto& [v, col] : column) {
        col = static_cast<Index>(r.vars.size());
        r.vars.push_back(v);
    }
    const auto& first = m.layers.front();
    const VectorXd z0 = (f.offset - m.input_norm.mean).cwiseQuotient(m.input_norm.scale);
    MatrixXd w = MatrixXd::Zero(first.w.rows(), static_cast<Index>(r.vars.size()));
    for (std::size_t k = 0; k < f.var.size(); ++k) {
        if (f.var[k] < 0) continue;
        const auto kk = static_cast<Index>(k);
        w.col(column.at(f.var[k])) += first.w.col(kk) * (f.coef[kk] / m.input_norm.scale[kk]);
    }
    r.model = m;
    r.model.layers.front() = {w, first.b + first.w * z0};
    r.model.input_norm.mean = VectorXd::Zero(w.cols());
    r.model.input_norm.scale = VectorXd::Ones(w.cols());
    r.model.feature_names.clear();
    r.model.layout_hash.clear();
    return r;
}

VectorXd ReducedSurrogate::gather(const VectorXd& x) const {
    VectorXd out(static_cast<Index>(vars.size()));
    for (std::size_t k = 0; k < vars.size(); ++k) out[static_cast<Index>(k)] = x[vars[k]];
    return out;
}

grid::BranchEnd tie_end(const grid::NetworkCase& c, const grid::TieLine& tie) {
    const auto& line = c.lines[c.line_index(tie.line_id)];
    if (tie.sending_bus != line.from && tie.sending_bus != line.to) {
        throw grid::InvalidCase("tie-line " + tie.line_id + " does not touch bus " + std::to_string(tie.sending_bus));
    }
    return grid::branch_end(c, line, tie.sending_bus == line.from);
}

namespace {

std::array<Index, 4> local_index(const PeriodLayout& layout, const grid::BranchEnd& e) {
    return {layout.vm(e.sending), layout.vm(e.receiving), layout.va(e.sending), layout.va(e.receiving)};
}

grid::LocalFlow end_flow(const grid::BranchEnd& e, const VectorXd& x, const std::array<Index, 4>& ix, bool reactive) {
    return reactive ? grid::reactive_flow(e, x[ix[0]], x[ix[1]], x[ix[2]], x[ix[3]])
                    : grid::active_flow(e, x[ix[0]], x[ix[1]], x[ix[2]], x[ix[3]]);
}

}  // namespace

MarginEval surrogate_margin(const grid::NetworkCase& c, const PeriodLayout& layout, const ReducedSurrogate& s,
                            const VectorXd& x, std::size_t tie, bool with_hessian) {
    if (tie >= c.tie_lines.size()) throw std::out_of_range("tie-line index out of range");
    if (x.size() != layout.size()) throw std::invalid_argument("period vector has the wrong size");
    const auto e = tie_end(c, c.tie_lines[tie]);
    const auto ix = local_index(layout, e);
    const auto flow = end_flow(e, x, ix, false);
    const VectorXd xr = s.gather(x);

    MarginEval out;
    out.flow = flow.value;
    out.gamma = s.model.predict(xr)[static_cast<Index>(tie)];
    out.value = out.flow - out.gamma;
    out.gradient = VectorXd::Zero(layout.size());
    for (int a = 0; a < 4; ++a) out.gradient[ix[a]] += flow.grad[a];
    const VectorXd j = s.model.jacobian(xr).row(static_cast<Index>(tie)).transpose();
    for (std::size_t k = 0; k < s.vars.size(); ++k) out.gradient[s.vars[k]] -= j[static_cast<Index>(k)];
    if (with_hessian) {
        out.hessian = MatrixXd::Zero(layout.size(), layout.size());
        for (int a = 0; a < 4; ++a) {
            for (int b = 0; b < 4; ++b) out.hessian(ix[a], ix[b]) += flow.hess[a][b];
        }
        if (s.model.hidden_layers() > 0) {
            const MatrixXd h = s.model.hessian(xr, tie);
            for (std::size_t a = 0; a < s.vars.size(); ++a) {
                for (std::size_t b = 0; b < s.vars.size(); ++b) {
                    out.hessian(s.vars[a], s.vars[b]) -= h(static_cast<Index>(a), static_cast<Index>(b));
                }
            }
        }
    }
    return out;
}

std::vector<std::pair<std::string, double>> rank_sensitivities(const std::vector<std::string>& names,
                                                               const VectorXd& gradient) {
    if (names.size() != static_cast<std::size_t>(gradient.size())) {
        throw std::invalid_argument("names and gradient differ in length");
    }
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t k = 0; k < names.size(); ++k) out.emplace_back(names[k], gradient[static_cast<Index>(k)]);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return std::abs(a.second) > std::abs(b.second); });
    return out;
}

// ---------------------------------------------------------------------------

Census census(const grid::NetworkCase& c, int horizon, const Variant& variant, std::size_t cuts) {
    const auto g = static_cast<Index>(c.generators.size()), w = static_cast<Index>(c.wind_farms.size()),
               e = static_cast<Index>(c.storage.size()), n = static_cast<Index>(c.buses.size()),
               l = static_cast<Index>(c.lines.size()), k = static_cast<Index>(c.tie_lines.size());
    const Index security = variant.kind == VariantKind::unconstrained ? 0 : k;
    Census out;
    out.variables = horizon * (2 * g + w + 2 * e + 2 * n);
    out.equalities = horizon * (2 * n + 1 + e);
    out.inequalities = horizon * (2 * g + w + 2 * e + n + l + g + security) + static_cast<Index>(cuts);
    out.breakdown = {{"per_period",
                      {{"variables", {{"P_g", g}, {"Q_g", g}, {"curtail", w}, {"P_ess", e}, {"E_ess", e}, {"V", n}, {"theta", n}}},
                       {"equalities", {{"P_balance", n}, {"Q_balance", n}, {"angle_reference", 1}, {"energy", e}}},
                       {"inequalities",
                        {{"variable_bounds", 2 * g + w + 2 * e + n}, {"line_flow", l}, {"ramp", g}, {"security", security}}}}},
                     {"horizon", horizon},
                     {"cuts", cuts}};
    return out;
}

PlanningProblem::PlanningProblem(const grid::NetworkCase& c, std::vector<PeriodForecast> forecasts, InitialCondition init,
                                 PlannerConfig config, std::vector<LinearCut> cuts, double period_hours)
    : case_(c), forecasts_(std::move(forecasts)), init_(std::move(init)), config_(std::move(config)),
      cuts_(std::move(cuts)), dt_(period_hours), layout_(PeriodLayout::of(c)) {
    case_.validate();
    config_.validate(case_);
    if (forecasts_.empty()) throw BuildError("horizon has no periods");
    if (!(dt_ > 0.0)) throw BuildError("period length must be positive");
    for (const auto& f : forecasts_) {
        if (f.load_p.size() != c.buses.size() || f.load_q.size() != c.buses.size() || f.wind.size() != c.wind_farms.size()) {
            throw BuildError("forecast does not match the case");
        }
    }
    if (init_.energy.empty()) {
        for (const auto& e : c.storage) init_.energy.push_back(e.e0);
    }
    if (init_.energy.size() != c.storage.size()) throw BuildError("initial energy does not match the storage units");
    for (std::size_t e = 0; e < c.storage.size(); ++e) {
        if (init_.energy[e] < c.storage[e].e_min - 1e-9 || init_.energy[e] > c.storage[e].e_max + 1e-9) {
            throw BuildError("initial energy of " + c.storage[e].id + " is outside its bounds");
        }
    }
    if (!init_.pg.empty()) {
        if (init_.pg.size() != c.generators.size()) throw BuildError("initial dispatch does not match the generators");
        for (std::size_t g = 0; g < c.generators.size(); ++g) {
            const auto& gen = c.generators[g];
            if (init_.pg[g] < gen.p_min - 1e-6 || init_.pg[g] > gen.p_max + 1e-6) {
                throw BuildError("initial dispatch of " + gen.id + " is outside its limits");
            }
        }
    }
    for (const auto& cut : cuts_) {
        if (cut.period < 0 || cut.period >= horizon() || cut.coef.size() != layout_.size()) {
            throw BuildError("linear cut does not fit the horizon");
        }
    }

    for (const auto& line : c.lines) {
        from_ends_.push_back(grid::branch_end(c, line, true));
        to_ends_.push_back(grid::branch_end(c, line, false));
    }
    for (const auto& t : c.tie_lines) tie_ends_.push_back(tie_end(c, t));
    for (const auto& g : c.generators) gen_bus_.push_back(c.bus_index(g.bus));
    for (const auto& w : c.wind_farms) farm_bus_.push_back(c.bus_index(w.bus));
    for (const auto& e : c.storage) unit_bus_.push_back(c.bus_index(e.bus));
    slack_ = c.slack_index();
    if (config_.variant.kind == VariantKind::surrogate) {
        for (const auto& f : forecasts_) reduced_.push_back(ReducedSurrogate::build(*config_.model, FeatureMap::build(c, layout_, f)));
    }

    m_ = horizon() * (2 * layout_.buses + 1 + layout_.units);

    std::vector<double> lo, up;
    auto add = [&](Row row, double l, double u, std::string label) {
        rows_.push_back(row);
        lo.push_back(l);
        up.push_back(u);
        labels_.push_back(std::move(label));
    };
    const auto names = layout_.names(c);
    for (int t = 0; t < horizon(); ++t) {
        const std::string at = "@" + std::to_string(t);
        const Index o = offset(t);
        for (std::size_t g = 0; g < c.generators.size(); ++g) {
            add({RowKind::variable, t, o + layout_.pg(g)}, c.generators[g].p_min, c.generators[g].p_max, names[layout_.pg(g)] + at);
        }
        for (std::size_t g = 0; g < c.generators.size(); ++g) {
            add({RowKind::variable, t, o + layout_.qg(g)}, c.generators[g].q_min, c.generators[g].q_max, names[layout_.qg(g)] + at);
        }
        for (std::size_t w = 0; w < c.wind_farms.size(); ++w) {
            add({RowKind::variable, t, o + layout_.curtail(w)}, 0.0, curtail_upper(forecasts_[t].wind[w]),
                names[layout_.curtail(w)] + at);
        }
        for (std::size_t e = 0; e < c.storage.size(); ++e) {
            add({RowKind::variable, t, o + layout_.pe(e)}, -c.storage[e].p_charge_max, c.storage[e].p_discharge_max,
                names[layout_.pe(e)] + at);
        }
        for (std::size_t e = 0; e < c.storage.size(); ++e) {
            add({RowKind::variable, t, o + layout_.ee(e)}, c.storage[e].e_min, c.storage[e].e_max, names[layout_.ee(e)] + at);
        }
        for (std::size_t i = 0; i < c.buses.size(); ++i) {
            double vl = c.buses[i].v_min, vu = c.buses[i].v_max;
            if (c.generator_at(c.buses[i].id)) {
                vl = std::max(vl, config_.vg_min);
                vu = std::min(vu, config_.vg_max);
            }
            add({RowKind::variable, t, o + layout_.vm(i)}, vl, vu, names[layout_.vm(i)] + at);
        }
        for (std::size_t l = 0; l < c.lines.size(); ++l) {
            add({RowKind::line, t, static_cast<Index>(l)}, c.lines[l].p_min, c.lines[l].p_max, "flow:" + c.lines[l].id + at);
        }
        if (t > 0 || !init_.pg.empty()) {
            for (std::size_t g = 0; g < c.generators.size(); ++g) {
                add({RowKind::ramp, t, static_cast<Index>(g)}, -c.generators[g].ramp_down * dt_, c.generators[g].ramp_up * dt_,
                    "ramp:" + c.generators[g].id + at);
            }
        }
        security_rows_.push_back(-1);
        if (config_.variant.kind == VariantKind::surrogate) {
            security_rows_.back() = static_cast<Index>(rows_.size());
            for (std::size_t k = 0; k < c.tie_lines.size(); ++k) {
                add({RowKind::margin, t, static_cast<Index>(k)}, -ipm::kInf, -config_.margin,
                    "margin:" + c.tie_lines[k].line_id + at);
            }
        } else if (config_.variant.kind == VariantKind::static_limit) {
            security_rows_.back() = static_cast<Index>(rows_.size());
            for (std::size_t k = 0; k < c.tie_lines.size(); ++k) {
                add({RowKind::static_flow, t, static_cast<Index>(k)}, -ipm::kInf,
                    config_.static_limits[k] - config_.margin, "static:" + c.tie_lines[k].line_id + at);
            }
        }
    }
    for (std::size_t k = 0; k < cuts_.size(); ++k) {
        add({RowKind::cut, cuts_[k].period, static_cast<Index>(k)}, cuts_[k].lower, cuts_[k].upper,
            cuts_[k].label.empty() ? "cut:" + std::to_string(k) : cuts_[k].label);
    }
    lower_ = Eigen::Map<VectorXd>(lo.data(), static_cast<Index>(lo.size()));
    upper_ = Eigen::Map<VectorXd>(up.data(), static_cast<Index>(up.size()));
    for (Index j = 0; j < lower_.size(); ++j) {
        if (!(lower_[j] < upper_[j])) throw BuildError("constraint " + labels_[j] + " has an empty range");
    }
}

const ReducedSurrogate* PlanningProblem::surrogate(int t) const {
    return reduced_.empty() ? nullptr : &reduced_.at(static_cast<std::size_t>(t));
}

Index PlanningProblem::security_row(int t) const { return security_rows_.at(static_cast<std::size_t>(t)); }

VectorXd PlanningProblem::initial_guess() const {
    VectorXd xp = VectorXd::Zero(layout_.size());
    const auto& c = case_;
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        const auto& gen = c.generators[g];
        xp[layout_.pg(g)] = std::clamp(gen.p, gen.p_min, gen.p_max);
        xp[layout_.qg(g)] = std::clamp(0.0, gen.q_min, gen.q_max);
    }
    for (std::size_t e = 0; e < c.storage.size(); ++e) xp[layout_.ee(e)] = init_.energy[e];
    for (std::size_t i = 0; i < c.buses.size(); ++i) xp[layout_.vm(i)] = 1.0;
    if (init_.guess) {
        const auto& p = *init_.guess;
        for (std::size_t g = 0; g < c.generators.size() && g < p.pg.size(); ++g) {
            xp[layout_.pg(g)] = p.pg[g];
            if (g < p.qg.size()) xp[layout_.qg(g)] = p.qg[g];
        }
        for (std::size_t e = 0; e < c.storage.size() && e < p.pe.size(); ++e) xp[layout_.pe(e)] = p.pe[e];
        for (std::size_t i = 0; i < c.buses.size() && i < p.vm.size(); ++i) {
            xp[layout_.vm(i)] = p.vm[i];
            xp[layout_.va(i)] = p.va[i] - p.va[slack_];
        }
    }
    if (!init_.pg.empty()) {
        for (std::size_t g = 0; g < c.generators.size(); ++g) xp[layout_.pg(g)] = init_.pg[g];
    }
    VectorXd x(variables());
    for (int t = 0; t < horizon(); ++t) x.segment(offset(t), layout_.size()) = xp;
    return x;
}

double PlanningProblem::period_cost(const VectorXd& x, int t) const {
    const Index o = offset(t);
    double cost = 0.0;
    for (std::size_t g = 0; g < case_.generators.size(); ++g) {
        const auto& gen = case_.generators[g];
        const double p = kMw * x[o + layout_.pg(g)];
        cost += gen.cost_a * p * p + gen.cost_b * p + gen.cost_c;
    }
    for (std::size_t w = 0; w < case_.wind_farms.size(); ++w) {
        cost += case_.wind_farms[w].curtail_cost * kMw * x[o + layout_.curtail(w)];
    }
    return cost * dt_;
}

double PlanningProblem::objective(const VectorXd& x) const {
    double total = 0.0;
    for (int t = 0; t < horizon(); ++t) total += period_cost(x, t);
    return config_.cost_scale * total;
}

VectorXd PlanningProblem::objective_gradient(const VectorXd& x) const {
    VectorXd grad = VectorXd::Zero(variables());
    const double s = config_.cost_scale * dt_;
    for (int t = 0; t < horizon(); ++t) {
        const Index o = offset(t);
        for (std::size_t g = 0; g < case_.generators.size(); ++g) {
            const auto& gen = case_.generators[g];
            const double p = kMw * x[o + layout_.pg(g)];
            grad[o + layout_.pg(g)] = s * kMw * (2.0 * gen.cost_a * p + gen.cost_b);
        }
        for (std::size_t w = 0; w < case_.wind_farms.size(); ++w) {
            grad[o + layout_.curtail(w)] = s * kMw * case_.wind_farms[w].curtail_cost;
        }
    }
    return grad;
}

VectorXd PlanningProblem::equality(const VectorXd& x) const {
    VectorXd h = VectorXd::Zero(m_);
    const Index n = layout_.buses, per = 2 * n + 1 + layout_.units;
    for (int t = 0; t < horizon(); ++t) {
        const Index o = offset(t), r = per * t;
        const VectorXd xp = x.segment(o, layout_.size());
        const auto& f = forecasts_[t];
        for (Index i = 0; i < n; ++i) {
            const auto& bus = case_.buses[static_cast<std::size_t>(i)];
            const double v = xp[layout_.vm(i)];
            h[r + i] = -f.load_p[i] - bus.gs * v * v;
            h[r + n + i] = -f.load_q[i] + bus.bs * v * v;
        }
        for (std::size_t g = 0; g < gen_bus_.size(); ++g) {
            h[r + gen_bus_[g]] += xp[layout_.pg(g)];
            h[r + n + gen_bus_[g]] += xp[layout_.qg(g)];
        }
        for (std::size_t w = 0; w < farm_bus_.size(); ++w) h[r + farm_bus_[w]] += f.wind[w] - xp[layout_.curtail(w)];
        for (std::size_t e = 0; e < unit_bus_.size(); ++e) h[r + unit_bus_[e]] += xp[layout_.pe(e)];
        for (const auto* ends : {&from_ends_, &to_ends_}) {
            for (const auto& e : *ends) {
                const auto ix = local_index(layout_, e);
                h[r + e.sending] -= end_flow(e, xp, ix, false).value;
                h[r + n + e.sending] -= end_flow(e, xp, ix, true).value;
            }
        }
        h[r + 2 * n] = xp[layout_.va(slack_)];
        for (std::size_t e = 0; e < case_.storage.size(); ++e) {
            const double before = t == 0 ? init_.energy[e] : x[offset(t - 1) + layout_.ee(e)];
            h[r + 2 * n + 1 + e] = xp[layout_.ee(e)] - before + dt_ * xp[layout_.pe(e)];
        }
    }
    return h;
}

ipm::SparseMatrix PlanningProblem::equality_jacobian(const VectorXd& x) const {
    std::vector<Triplet> trips;
    const Index n = layout_.buses, per = 2 * n + 1 + layout_.units;
    for (int t = 0; t < horizon(); ++t) {
        const Index o = offset(t), r = per * t;
        const VectorXd xp = x.segment(o, layout_.size());
        for (Index i = 0; i < n; ++i) {
            const auto& bus = case_.buses[static_cast<std::size_t>(i)];
            const double v = xp[layout_.vm(i)];
            if (bus.gs != 0.0) trips.emplace_back(r + i, o + layout_.vm(i), -2.0 * bus.gs * v);
            if (bus.bs != 0.0) trips.emplace_back(r + n + i, o + layout_.vm(i), 2.0 * bus.bs * v);
        }
        for (std::size_t g = 0; g < gen_bus_.size(); ++g) {
            trips.emplace_back(r + gen_bus_[g], o + layout_.pg(g), 1.0);
            trips.emplace_back(r + n + gen_bus_[g], o + layout_.qg(g), 1.0);
        }
        for (std::size_t w = 0; w < farm_bus_.size(); ++w) trips.emplace_back(r + farm_bus_[w], o + layout_.curtail(w), -1.0);
        for (std::size_t e = 0; e < unit_bus_.size(); ++e) trips.emplace_back(r + unit_bus_[e], o + layout_.pe(e), 1.0);
        for (const auto* ends : {&from_ends_, &to_ends_}) {
            for (const auto& e : *ends) {
                const auto ix = local_index(layout_, e);
                const auto p = end_flow(e, xp, ix, false);
                const auto q = end_flow(e, xp, ix, true);
                for (int a = 0; a < 4; ++a) {
                    trips.emplace_back(r + e.sending, o + ix[a], -p.grad[a]);
                    trips.emplace_back(r + n + e.sending, o + ix[a], -q.grad[a]);
                }
            }
        }
        trips.emplace_back(r + 2 * n, o + layout_.va(slack_), 1.0);
        for (std::size_t e = 0; e < case_.storage.size(); ++e) {
            const Index row = r + 2 * n + 1 + static_cast<Index>(e);
            trips.emplace_back(row, o + layout_.ee(e), 1.0);
            trips.emplace_back(row, o + layout_.pe(e), dt_);
            if (t > 0) trips.emplace_back(row, offset(t - 1) + layout_.ee(e), -1.0);
        }
    }
    ipm::SparseMatrix j(m_, variables());
    j.setFromTriplets(trips.begin(), trips.end());
    return j;
}

VectorXd PlanningProblem::inequality(const VectorXd& x) const {
    VectorXd g(inequalities());
    for (std::size_t k = 0; k < rows_.size(); ++k) {
        const auto& row = rows_[k];
        const Index o = offset(row.period);
        double v = 0.0;
        switch (row.kind) {
            case RowKind::variable: v = x[row.index]; break;
            case RowKind::line: {
                const auto& e = from_ends_[static_cast<std::size_t>(row.index)];
                const VectorXd xp = x.segment(o, layout_.size());
                v = end_flow(e, xp, local_index(layout_, e), false).value;
                break;
            }
            case RowKind::ramp: {
                const auto gi = static_cast<std::size_t>(row.index);
                const double before = row.period == 0 ? init_.pg[gi] : x[offset(row.period - 1) + layout_.pg(gi)];
                v = x[o + layout_.pg(gi)] - before;
                break;
            }
            case RowKind::margin:
                v = surrogate_margin(case_, layout_, reduced_[static_cast<std::size_t>(row.period)],
                                     x.segment(o, layout_.size()), static_cast<std::size_t>(row.index), false)
                        .value;
                break;
            case RowKind::static_flow: {
                const auto& e = tie_ends_[static_cast<std::size_t>(row.index)];
                const VectorXd xp = x.segment(o, layout_.size());
                v = end_flow(e, xp, local_index(layout_, e), false).value;
                break;
            }
            case RowKind::cut: v = cuts_[static_cast<std::size_t>(row.index)].coef.dot(x.segment(o, layout_.size())); break;
        }
        g[static_cast<Index>(k)] = v;
    }
    return g;
}

ipm::SparseMatrix PlanningProblem::inequality_jacobian(const VectorXd& x) const {
    std::vector<Triplet> trips;
    for (std::size_t k = 0; k < rows_.size(); ++k) {
        const auto& row = rows_[k];
        const auto r = static_cast<Index>(k);
        const Index o = offset(row.period);
        switch (row.kind) {
            case RowKind::variable: trips.emplace_back(r, row.index, 1.0); break;
            case RowKind::line:
            case RowKind::static_flow: {
                const auto& e = row.kind == RowKind::line ? from_ends_[static_cast<std::size_t>(row.index)]
                                                          : tie_ends_[static_cast<std::size_t>(row.index)];
                const VectorXd xp = x.segment(o, layout_.size());
                const auto ix = local_index(layout_, e);
                const auto f = end_flow(e, xp, ix, false);
                for (int a = 0; a < 4; ++a) trips.emplace_back(r, o + ix[a], f.grad[a]);
                break;
            }
            case RowKind::ramp: {
                const auto gi = static_cast<std::size_t>(row.index);
                trips.emplace_back(r, o + layout_.pg(gi), 1.0);
                if (row.period > 0) trips.emplace_back(r, offset(row.period - 1) + layout_.pg(gi), -1.0);
                break;
            }
            case RowKind::margin: {
                const auto m = surrogate_margin(case_, layout_, reduced_[static_cast<std::size_t>(row.period)],
                                                x.segment(o, layout_.size()), static_cast<std::size_t>(row.index), false);
                for (Index i = 0; i < layout_.size(); ++i) {
                    if (m.gradient[i] != 0.0) trips.emplace_back(r, o + i, m.gradient[i]);
                }
                break;
            }
            case RowKind::cut: {
                const auto& coef = cuts_[static_cast<std::size_t>(row.index)].coef;
                for (Index i = 0; i < layout_.size(); ++i) {
                    if (coef[i] != 0.0) trips.emplace_back(r, o + i, coef[i]);
                }
                break;
            }
        }
    }
    ipm::SparseMatrix j(inequalities(), variables());
    j.setFromTriplets(trips.begin(), trips.end());
    return j;
}

ipm::SparseMatrix PlanningProblem::lagrangian_hessian(const VectorXd& x, const VectorXd& eq_weights,
                                                      const VectorXd& ineq_weights) const {
    std::vector<Triplet> trips;
    const Index n = layout_.buses, per = 2 * n + 1 + layout_.units;
    const double s = config_.cost_scale * dt_;
    auto add_local = [&](Index o, const std::array<Index, 4>& ix, const grid::LocalFlow& f, double weight) {
        for (int a = 0; a < 4; ++a) {
            for (int b = 0; b < 4; ++b) {
                if (f.hess[a][b] != 0.0) trips.emplace_back(o + ix[a], o + ix[b], weight * f.hess[a][b]);
            }
        }
    };
    for (int t = 0; t < horizon(); ++t) {
        const Index o = offset(t), r = per * t;
        const VectorXd xp = x.segment(o, layout_.size());
        for (std::size_t g = 0; g < case_.generators.size(); ++g) {
            trips.emplace_back(o + layout_.pg(g), o + layout_.pg(g), s * kMw * kMw * 2.0 * case_.generators[g].cost_a);
        }
        for (Index i = 0; i < n; ++i) {
            const auto& bus = case_.buses[static_cast<std::size_t>(i)];
            const double d = -2.0 * bus.gs * eq_weights[r + i] + 2.0 * bus.bs * eq_weights[r + n + i];
            if (d != 0.0) trips.emplace_back(o + layout_.vm(i), o + layout_.vm(i), d);
        }
        for (const auto* ends : {&from_ends_, &to_ends_}) {
            for (const auto& e : *ends) {
                const auto ix = local_index(layout_, e);
                add_local(o, ix, end_flow(e, xp, ix, false), -eq_weights[r + e.sending]);
                add_local(o, ix, end_flow(e, xp, ix, true), -eq_weights[r + n + e.sending]);
            }
        }
    }
    for (std::size_t k = 0; k < rows_.size(); ++k) {
        const auto& row = rows_[k];
        const double weight = ineq_weights[static_cast<Index>(k)];
        if (weight == 0.0) continue;
        const Index o = offset(row.period);
        if (row.kind == RowKind::line || row.kind == RowKind::static_flow) {
            const auto& e = row.kind == RowKind::line ? from_ends_[static_cast<std::size_t>(row.index)]
                                                      : tie_ends_[static_cast<std::size_t>(row.index)];
            const VectorXd xp = x.segment(o, layout_.size());
            const auto ix = local_index(layout_, e);
            add_local(o, ix, end_flow(e, xp, ix, false), weight);
        } else if (row.kind == RowKind::margin) {
            const auto m = surrogate_margin(case_, layout_, reduced_[static_cast<std::size_t>(row.period)],
                                            x.segment(o, layout_.size()), static_cast<std::size_t>(row.index), true);
            for (Index a = 0; a < layout_.size(); ++a) {
                for (Index b = 0; b < layout_.size(); ++b) {
                    if (m.hessian(a, b) != 0.0) trips.emplace_back(o + a, o + b, weight * m.hessian(a, b));
                }
            }
        }
    }
    ipm::SparseMatrix h(variables(), variables());
    h.setFromTriplets(trips.begin(), trips.end());
    return h;
}

}  // namespace tcop::planner
