#include "tcop/dataset/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>
#include <tuple>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "tcop/common/hash.hpp"
#include "tcop/grid/case_io.hpp"

namespace tcop::dataset {

namespace {

using Wide = boost::multiprecision::cpp_bin_float_100;

double frac_times(const Wide& r, std::uint64_t n) {
    Wide x = r * n;
    x -= boost::multiprecision::floor(x);
    return x.convert_to<double>();
}

// Assumed network losses when balancing a sampled dispatch, as a share of load.
constexpr double kLossShare = 0.01;

std::string slot_name(FeatureKind kind, const std::string& unit) {
    switch (kind) {
        case FeatureKind::p_injection: return "P_inj:" + unit;
        case FeatureKind::q_injection: return "Q_inj:" + unit;
        case FeatureKind::v_setpoint: return "V_g:" + unit;
        case FeatureKind::p_load: return "P_load:" + unit;
        case FeatureKind::q_load: return "Q_load:" + unit;
        case FeatureKind::v_bus: return "V:" + unit;
    }
    return unit;
}

}  // namespace

double weyl_sequence(double r, std::uint64_t n) {
    if (!(r > 0.0)) throw std::invalid_argument("Weyl multiplier must be positive");
    if (n == 0) throw std::invalid_argument("Weyl index starts at 1");
    return frac_times(Wide(r), n);
}

double weyl_exp(int j, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Weyl index starts at 1");
    return frac_times(boost::multiprecision::exp(Wide(j)), n);
}

// ---------------------------------------------------------------------------

FeatureLayout FeatureLayout::of(const grid::NetworkCase& c) {
    struct Unit {
        int bus;
        int kind;
        std::string id;
        UnitKind unit;
        std::size_t index;
    };
    std::vector<Unit> units;
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        units.push_back({c.generators[g].bus, 0, c.generators[g].id, UnitKind::generator, g});
    }
    for (std::size_t w = 0; w < c.wind_farms.size(); ++w) {
        units.push_back({c.wind_farms[w].bus, 1, c.wind_farms[w].id, UnitKind::wind, w});
    }
    for (std::size_t e = 0; e < c.storage.size(); ++e) {
        units.push_back({c.storage[e].bus, 2, c.storage[e].id, UnitKind::storage, e});
    }
    std::sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) {
        return std::tie(a.bus, a.kind, a.id) < std::tie(b.bus, b.kind, b.id);
    });
    std::vector<std::size_t> bus_order(c.buses.size());
    for (std::size_t i = 0; i < bus_order.size(); ++i) bus_order[i] = i;
    std::sort(bus_order.begin(), bus_order.end(), [&](auto a, auto b) { return c.buses[a].id < c.buses[b].id; });

    FeatureLayout out;
    for (auto kind : {FeatureKind::p_injection, FeatureKind::q_injection}) {
        for (const auto& u : units) out.slots.push_back({kind, u.unit, u.index, slot_name(kind, u.id)});
    }
    for (const auto& u : units) {
        if (u.unit == UnitKind::generator) {
            out.slots.push_back({FeatureKind::v_setpoint, u.unit, u.index, slot_name(FeatureKind::v_setpoint, u.id)});
        }
    }
    for (auto kind : {FeatureKind::p_load, FeatureKind::q_load, FeatureKind::v_bus}) {
        for (auto i : bus_order) {
            out.slots.push_back({kind, UnitKind::bus, i, slot_name(kind, std::to_string(c.buses[i].id))});
        }
    }
    return out;
}

std::vector<std::string> FeatureLayout::names() const {
    std::vector<std::string> out;
    for (const auto& s : slots) out.push_back(s.name);
    return out;
}

std::string FeatureLayout::hash() const {
    std::uint64_t h = fnv1a("");
    for (const auto& s : slots) h = fnv1a(s.name + ";", h);
    return hex64(h);
}

Eigen::VectorXd extract_features(const grid::OperatingPoint& p, const grid::NetworkCase& c,
                                 const FeatureLayout& layout) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t k = 0; k < layout.size(); ++k) {
        const auto& s = layout.slots[k];
        double v = 0.0;
        switch (s.kind) {
            case FeatureKind::p_injection:
                v = s.unit == UnitKind::generator ? p.pg[s.index] : s.unit == UnitKind::wind ? p.pw[s.index] : p.pe[s.index];
                break;
            case FeatureKind::q_injection:
                v = s.unit == UnitKind::generator ? p.qg[s.index] : 0.0;
                break;
            case FeatureKind::v_setpoint:
                v = p.vm[c.bus_index(c.generators[s.index].bus)];
                break;
            case FeatureKind::p_load: v = c.buses[s.index].pd; break;
            case FeatureKind::q_load: v = c.buses[s.index].qd; break;
            case FeatureKind::v_bus: v = p.vm[s.index]; break;
        }
        out[static_cast<Eigen::Index>(k)] = v;
    }
    return out;
}

Eigen::VectorXd extract_features(const grid::OperatingPoint& p, const grid::NetworkCase& c) {
    return extract_features(p, c, FeatureLayout::of(c));
}

// ---------------------------------------------------------------------------

void SamplingConfig::validate() const {
    if (con_min.size() != con_max.size()) throw std::invalid_argument("control bound vectors differ in length");
    if (load_mean.size() != load_deviation.size()) throw std::invalid_argument("load statistics differ in length");
    for (std::size_t i = 0; i < con_min.size(); ++i) {
        if (con_min[i] > con_max[i]) throw std::invalid_argument("control lower bound above upper bound");
    }
    for (double d : load_deviation) {
        if (d < 0.0) throw std::invalid_argument("load deviation must be nonnegative");
    }
    if (!(expansion > 1.0)) throw std::invalid_argument("expansion coefficient must exceed 1");
    if (samples < 1) throw std::invalid_argument("at least one sample is required");
    if (first_index < 1) throw std::invalid_argument("Weyl index starts at 1");
}

nlohmann::json SamplingConfig::to_json() const {
    return {{"con_min", con_min},
            {"con_max", con_max},
            {"load_mean", load_mean},
            {"load_deviation", load_deviation},
            {"expansion", expansion},
            {"samples", samples},
            {"first_index", first_index}};
}

SamplingConfig SamplingConfig::from_json(const nlohmann::json& j) {
    SamplingConfig s;
    s.con_min = j.at("con_min").get<std::vector<double>>();
    s.con_max = j.at("con_max").get<std::vector<double>>();
    s.load_mean = j.at("load_mean").get<std::vector<double>>();
    s.load_deviation = j.at("load_deviation").get<std::vector<double>>();
    s.expansion = j.value("expansion", 1.2);
    s.samples = j.at("samples").get<std::size_t>();
    s.first_index = j.value("first_index", std::uint64_t{1});
    return s;
}

SamplingConfig SamplingConfig::defaults(const grid::NetworkCase& c,
                                        const std::vector<std::vector<double>>& load_history, std::size_t samples) {
    SamplingConfig s;
    s.samples = samples;
    for (const auto& g : c.generators) {
        s.con_min.push_back(g.p_min);
        s.con_max.push_back(g.p_max);
    }
    for (const auto& w : c.wind_farms) {
        s.con_min.push_back(0.0);
        s.con_max.push_back(w.rated);
    }
    for (const auto& e : c.storage) {
        s.con_min.push_back(-e.p_charge_max);
        s.con_max.push_back(e.p_discharge_max);
    }
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
        s.con_min.push_back(0.97);
        s.con_max.push_back(1.05);
    }
    const auto nb = c.buses.size();
    if (load_history.empty()) {
        for (const auto& b : c.buses) s.load_mean.push_back(b.pd);
        for (const auto& b : c.buses) s.load_mean.push_back(b.qd);
        for (double m : s.load_mean) s.load_deviation.push_back(0.15 * std::abs(m));
        return s;
    }
    s.load_mean.assign(2 * nb, 0.0);
    s.load_deviation.assign(2 * nb, 0.0);
    for (const auto& row : load_history) {
        if (row.size() != 2 * nb) throw std::invalid_argument("load history row has the wrong length");
        for (std::size_t i = 0; i < row.size(); ++i) s.load_mean[i] += row[i] / static_cast<double>(load_history.size());
    }
    for (const auto& row : load_history) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            s.load_deviation[i] = std::max(s.load_deviation[i], std::abs(row[i] - s.load_mean[i]));
        }
    }
    return s;
}

std::vector<Condition> sample_conditions(const SamplingConfig& config) {
    config.validate();
    const auto ncon = config.con_min.size();
    const auto nload = config.load_mean.size();
    std::vector<Wide> r(ncon + nload);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = boost::multiprecision::exp(Wide(static_cast<int>(j + 1)));

    std::vector<Condition> out(config.samples);
    for (std::size_t k = 0; k < config.samples; ++k) {
        const std::uint64_t n = config.first_index + k;
        auto& cond = out[k];
        cond.con.resize(ncon);
        cond.load.resize(nload);
        for (std::size_t j = 0; j < ncon; ++j) {
            cond.con[j] = config.con_min[j] + frac_times(r[j], n) * (config.con_max[j] - config.con_min[j]);
        }
        for (std::size_t j = 0; j < nload; ++j) {
            const double half = config.expansion * config.load_deviation[j];
            cond.load[j] = config.load_mean[j] - half + frac_times(r[ncon + j], n) * 2.0 * half;
        }
    }
    return out;
}

Realised realise(const grid::NetworkCase& base, const Condition& cond) {
    const auto ng = base.generators.size(), nw = base.wind_farms.size(), ne = base.storage.size();
    const auto nb = base.buses.size();
    if (cond.con.size() != 2 * ng + nw + ne || cond.load.size() != 2 * nb) {
        throw std::invalid_argument("condition does not match the case dimensions");
    }
    Realised out{base, grid::OperatingPoint::flat_start(base)};
    auto& c = out.c;
    auto& p = out.setpoints;
    double load = 0.0;
    for (std::size_t i = 0; i < nb; ++i) {
        c.buses[i].pd = cond.load[i];
        c.buses[i].qd = cond.load[nb + i];
        load += cond.load[i];
    }
    double supply = 0.0;
    for (std::size_t g = 0; g < ng; ++g) {
        p.pg[g] = cond.con[g];
        supply += p.pg[g];
    }
    for (std::size_t w = 0; w < nw; ++w) {
        p.pw[w] = cond.con[ng + w];
        c.wind_farms[w].p = p.pw[w];
        supply += p.pw[w];
    }
    for (std::size_t e = 0; e < ne; ++e) {
        p.pe[e] = cond.con[ng + nw + e];
        c.storage[e].p = p.pe[e];
        supply += p.pe[e];
    }
    for (std::size_t g = 0; g < ng; ++g) {
        const auto i = c.bus_index(c.generators[g].bus);
        p.vm[i] = cond.con[ng + nw + ne + g];
        c.generators[g].vg = p.vm[i];
    }

    // Shift every generator in proportion to its rating until supply meets load.
    double left = load * (1.0 + kLossShare) - supply;
    std::vector<bool> pinned(ng, false);
    while (std::abs(left) > 1e-12) {
        double rated = 0.0;
        for (std::size_t g = 0; g < ng; ++g) {
            if (!pinned[g]) rated += c.generators[g].p_max;
        }
        if (rated <= 0.0) throw std::domain_error("sampled dispatch cannot balance the load");
        double placed = 0.0;
        for (std::size_t g = 0; g < ng; ++g) {
            if (pinned[g]) continue;
            const auto& gen = c.generators[g];
            const double want = p.pg[g] + left * gen.p_max / rated;
            const double got = std::clamp(want, gen.p_min, gen.p_max);
            if (got != want) pinned[g] = true;
            placed += got - p.pg[g];
            p.pg[g] = got;
        }
        left -= placed;
    }
    for (std::size_t g = 0; g < ng; ++g) c.generators[g].p = p.pg[g];
    return out;
}

// ---------------------------------------------------------------------------

Normalization Normalization::fit(const Eigen::MatrixXd& rows) {
    if (rows.rows() == 0) throw std::invalid_argument("cannot fit a normalization on zero rows");
    Normalization n;
    n.mean = rows.colwise().mean().transpose();
    n.scale.resize(rows.cols());
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        const double var = (rows.col(j).array() - n.mean[j]).square().mean();
        const double sd = std::sqrt(var);
        n.scale[j] = sd > 1e-12 * std::max(1.0, std::abs(n.mean[j])) ? sd : 1.0;
    }
    return n;
}

Eigen::MatrixXd Normalization::apply(const Eigen::MatrixXd& rows) const {
    return (rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::MatrixXd Normalization::invert(const Eigen::MatrixXd& rows) const {
    return (rows.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
}

nlohmann::json Normalization::to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
}

Normalization Normalization::from_json(const nlohmann::json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("scale").get<std::vector<double>>();
    if (m.size() != s.size()) throw std::invalid_argument("normalization vectors differ in length");
    Normalization n;
    n.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    n.scale = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    return n;
}

// ---------------------------------------------------------------------------

std::size_t train_count(std::size_t kept, double split_fraction) {
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw std::invalid_argument("split fraction must be in (0, 1)");
    return static_cast<std::size_t>(std::floor(split_fraction * static_cast<double>(kept) + 1e-9));
}

LabelOutcome label_condition(const grid::NetworkCase& c, const Condition& cond, const ttc::TtcSearchConfig& config) {
    LabelOutcome out;
    Realised r;
    try {
        r = realise(c, cond);
    } catch (const std::domain_error&) {
        out.status = LabelOutcome::Status::unbalanced;
        return out;
    }
    grid::OperatingPoint solved;
    try {
        solved = grid::solve_power_flow(r.c, r.setpoints, config.power_flow).point;
    } catch (const grid::PowerFlowDiverged&) {
        out.status = LabelOutcome::Status::power_flow;
        return out;
    } catch (const grid::SingularJacobian&) {
        out.status = LabelOutcome::Status::power_flow;
        return out;
    }
    if (!ttc::static_violation(r.c, solved, config.checks).empty()) {
        out.status = LabelOutcome::Status::static_limits;
        return out;
    }
    out.features = extract_features(solved, r.c);
    try {
        out.ttc = ttc::compute_ttc(r.c, solved, config);
    } catch (const ttc::BaseInfeasible&) {
        out.status = LabelOutcome::Status::no_secure_transfer;
    }
    return out;
}

TrainingDataset build_dataset(const grid::NetworkCase& c, const SamplingConfig& sampling,
                              const ttc::TtcSearchConfig& ttc_config, double split_fraction, int jobs) {
    if (sampling.samples == 0) throw DegenerateDataset("no samples requested");
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw std::invalid_argument("split fraction must be in (0, 1)");
    ttc_config.validate();
    const auto conditions = sample_conditions(sampling);

    std::vector<LabelOutcome> outcomes(conditions.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < conditions.size(); k = next++) {
            outcomes[k] = label_condition(c, conditions[k], ttc_config);
        }
    };
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    TrainingDataset ds;
    const auto layout = FeatureLayout::of(c);
    ds.feature_names = layout.names();
    for (const auto& t : c.tie_lines) ds.target_names.push_back(t.line_id);
    ds.case_hash = grid::case_hash(c);
    ds.layout_hash = layout.hash();
    ds.sampling = sampling.to_json();
    ds.labeling = ttc::to_json(ttc_config);
    ds.requested = conditions.size();

    std::vector<std::size_t> kept;
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
        switch (outcomes[k].status) {
            case LabelOutcome::Status::ok: kept.push_back(k); break;
            case LabelOutcome::Status::unbalanced: ++ds.dropped.unbalanced; break;
            case LabelOutcome::Status::power_flow: ++ds.dropped.power_flow; break;
            case LabelOutcome::Status::static_limits: ++ds.dropped.static_limits; break;
            case LabelOutcome::Status::no_secure_transfer: ++ds.dropped.no_secure_transfer; break;
        }
    }
    if (2 * ds.dropped.total() > conditions.size()) {
        throw DegenerateDataset(std::to_string(ds.dropped.total()) + " of " + std::to_string(conditions.size()) +
                                " samples dropped");
    }
    const auto nf = static_cast<Eigen::Index>(layout.size());
    const auto nt = static_cast<Eigen::Index>(c.tie_lines.size());
    ds.features.resize(static_cast<Eigen::Index>(kept.size()), nf);
    ds.targets.resize(static_cast<Eigen::Index>(kept.size()), nt);
    for (std::size_t r = 0; r < kept.size(); ++r) {
        const auto& o = outcomes[kept[r]];
        ds.features.row(static_cast<Eigen::Index>(r)) = o.features.transpose();
        for (Eigen::Index l = 0; l < nt; ++l) ds.targets(static_cast<Eigen::Index>(r), l) = o.ttc.gamma[static_cast<std::size_t>(l)];
        ds.sample_index.push_back(sampling.first_index + kept[r]);
    }
    ds.n_train = train_count(kept.size(), split_fraction);
    if (ds.n_train == 0) throw DegenerateDataset("training split is empty");
    ds.feature_norm = Normalization::fit(ds.train_features());
    ds.target_norm = Normalization::fit(ds.train_targets());
    return ds;
}

// ---------------------------------------------------------------------------

namespace {

std::filesystem::path sidecar_of(const std::filesystem::path& csv) {
    auto p = csv;
    p.replace_extension(".json");
    return p;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void TrainingDataset::save(const std::filesystem::path& csv_path) const {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot write " + csv_path.string());
    std::vector<std::string> header = feature_names;
    for (const auto& t : target_names) header.push_back("Gamma:" + t);
    for (std::size_t k = 0; k < header.size(); ++k) out << header[k] << (k + 1 < header.size() ? "," : "\n");
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        for (Eigen::Index j = 0; j < features.cols(); ++j) out << format_double(features(r, j)) << ',';
        for (Eigen::Index l = 0; l < targets.cols(); ++l) {
            out << format_double(targets(r, l)) << (l + 1 < targets.cols() ? ',' : '\n');
        }
    }

    nlohmann::json side = {{"features", feature_names},
                           {"targets", target_names},
                           {"sample_index", sample_index},
                           {"n_train", n_train},
                           {"feature_norm", feature_norm.to_json()},
                           {"target_norm", target_norm.to_json()},
                           {"case_hash", case_hash},
                           {"layout_hash", layout_hash},
                           {"sampling", sampling},
                           {"labeling", labeling},
                           {"manifest", manifest},
                           {"requested", requested},
                           {"dropped",
                            {{"unbalanced", dropped.unbalanced},
                             {"power_flow", dropped.power_flow},
                             {"static_limits", dropped.static_limits},
                             {"no_secure_transfer", dropped.no_secure_transfer}}}};
    std::ofstream js(sidecar_of(csv_path));
    js << side.dump(1) << '\n';
}

TrainingDataset TrainingDataset::load(const std::filesystem::path& csv_path) {
    std::ifstream js(sidecar_of(csv_path));
    if (!js) throw std::runtime_error("missing dataset sidecar for " + csv_path.string());
    const auto side = nlohmann::json::parse(js);
    TrainingDataset ds;
    ds.feature_names = side.at("features").get<std::vector<std::string>>();
    ds.target_names = side.at("targets").get<std::vector<std::string>>();
    ds.sample_index = side.at("sample_index").get<std::vector<std::uint64_t>>();
    ds.n_train = side.at("n_train").get<std::size_t>();
    ds.feature_norm = Normalization::from_json(side.at("feature_norm"));
    ds.target_norm = Normalization::from_json(side.at("target_norm"));
    ds.case_hash = side.value("case_hash", "");
    ds.layout_hash = side.value("layout_hash", "");
    ds.sampling = side.value("sampling", nlohmann::json::object());
    ds.labeling = side.value("labeling", nlohmann::json::object());
    ds.manifest = side.value("manifest", nlohmann::json::object());
    ds.requested = side.value("requested", std::size_t{0});
    const auto& d = side.at("dropped");
    ds.dropped = {d.value("unbalanced", std::size_t{0}), d.value("power_flow", std::size_t{0}),
                  d.value("static_limits", std::size_t{0}), d.value("no_secure_transfer", std::size_t{0})};

    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot read " + csv_path.string());
    std::string line;
    std::getline(in, line);
    const auto nf = static_cast<Eigen::Index>(ds.feature_names.size());
    const auto nt = static_cast<Eigen::Index>(ds.target_names.size());
    std::vector<double> values;
    Eigen::Index rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Eigen::Index cols = 0;
        while (std::getline(ss, cell, ',')) {
            values.push_back(std::stod(cell));
            ++cols;
        }
        if (cols != nf + nt) throw std::runtime_error("dataset row " + std::to_string(rows + 1) + " has wrong width");
        ++rows;
    }
    if (static_cast<std::size_t>(rows) != ds.sample_index.size()) throw std::runtime_error("dataset row count mismatch");
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> all(values.data(), rows, nf + nt);
    ds.features = all.leftCols(nf);
    ds.targets = all.rightCols(nt);
    return ds;
}

}  // namespace tcop::dataset
