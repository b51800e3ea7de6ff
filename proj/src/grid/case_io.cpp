#include "tcop/grid/case_io.hpp"

#include <fstream>

#include "tcop/common/hash.hpp"

namespace tcop::grid {

using nlohmann::json;

namespace {

double mw(const json& j, const char* key, double fallback) {
    return j.contains(key) ? j.at(key).get<double>() / kBaseMva : fallback;
}

}  // namespace

NetworkCase case_from_json(const json& j) {
    NetworkCase c;
    c.name = j.value("name", "");
    if (j.contains("base_mva") && j.at("base_mva").get<double>() != kBaseMva) {
        throw InvalidCase("only a 100 MVA system base is supported");
    }
    for (const auto& jb : j.at("buses")) {
        Bus b;
        b.id = jb.at("id").get<int>();
        b.type = bus_type_from_string(jb.value("type", "pq"));
        b.area = area_from_string(jb.value("area", "none"));
        b.pd = mw(jb, "pd_mw", 0.0);
        b.qd = mw(jb, "qd_mvar", 0.0);
        b.gs = mw(jb, "gs_mw", 0.0);
        b.bs = mw(jb, "bs_mvar", 0.0);
        b.v_min = jb.value("v_min", b.v_min);
        b.v_max = jb.value("v_max", b.v_max);
        c.buses.push_back(b);
    }
    for (const auto& jl : j.value("lines", json::array())) {
        Line l;
        l.from = jl.at("from").get<int>();
        l.to = jl.at("to").get<int>();
        l.id = jl.value("id", std::to_string(l.from) + "-" + std::to_string(l.to));
        l.r = jl.value("r", 0.0);
        l.x = jl.value("x", 0.0);
        l.b = jl.value("b", 0.0);
        l.tap = jl.value("tap", 1.0);
        l.p_min = mw(jl, "p_min_mw", l.p_min);
        l.p_max = mw(jl, "p_max_mw", l.p_max);
        c.lines.push_back(l);
    }
    for (const auto& jg : j.value("generators", json::array())) {
        Generator g;
        g.bus = jg.at("bus").get<int>();
        g.id = jg.value("id", "G" + std::to_string(g.bus));
        g.p = mw(jg, "p_mw", 0.0);
        g.vg = jg.value("vg", 1.0);
        g.p_min = mw(jg, "p_min_mw", 0.0);
        g.p_max = mw(jg, "p_max_mw", 0.0);
        g.q_min = mw(jg, "q_min_mvar", 0.0);
        g.q_max = mw(jg, "q_max_mvar", 0.0);
        g.ramp_down = mw(jg, "ramp_down_mw_per_h", g.ramp_down);
        g.ramp_up = mw(jg, "ramp_up_mw_per_h", g.ramp_up);
        g.h = jg.value("h_s", g.h);
        g.xd_prime = jg.value("xd_prime", g.xd_prime);
        g.damping = jg.value("damping", 0.0);
        if (jg.contains("cost")) {
            const auto& jc = jg.at("cost");
            g.cost_a = jc.value("a", 0.0);
            g.cost_b = jc.value("b", 0.0);
            g.cost_c = jc.value("c", 0.0);
        }
        c.generators.push_back(g);
    }
    for (const auto& jw : j.value("wind_farms", json::array())) {
        WindFarm w;
        w.bus = jw.at("bus").get<int>();
        w.id = jw.value("id", "W" + std::to_string(w.bus));
        w.rated = mw(jw, "rated_mw", 0.0);
        w.p = mw(jw, "p_mw", 0.0);
        w.cut_in_speed = jw.value("cut_in_speed", w.cut_in_speed);
        w.rated_speed = jw.value("rated_speed", w.rated_speed);
        w.cut_out_speed = jw.value("cut_out_speed", w.cut_out_speed);
        w.curtail_cost = jw.value("curtail_cost_per_mwh", 0.0);
        c.wind_farms.push_back(w);
    }
    for (const auto& je : j.value("storage", json::array())) {
        EnergyStorage e;
        e.bus = je.at("bus").get<int>();
        e.id = je.value("id", "E" + std::to_string(e.bus));
        e.p_charge_max = mw(je, "p_charge_max_mw", 0.0);
        e.p_discharge_max = mw(je, "p_discharge_max_mw", 0.0);
        e.e_min = mw(je, "e_min_mwh", 0.0);
        e.e_max = mw(je, "e_max_mwh", 0.0);
        e.e0 = mw(je, "e0_mwh", e.e_min);
        e.p = mw(je, "p_mw", 0.0);
        c.storage.push_back(e);
    }
    for (const auto& jt : j.value("tie_lines", json::array())) {
        c.tie_lines.push_back({jt.at("line").get<std::string>(), jt.at("sending_bus").get<int>()});
    }
    c.validate();
    return c;
}

json case_to_json(const NetworkCase& c) {
    json j;
    j["name"] = c.name;
    j["base_mva"] = kBaseMva;
    j["buses"] = json::array();
    for (const auto& b : c.buses) {
        j["buses"].push_back({{"id", b.id},
                              {"type", to_string(b.type)},
                              {"area", to_string(b.area)},
                              {"pd_mw", b.pd * kBaseMva},
                              {"qd_mvar", b.qd * kBaseMva},
                              {"gs_mw", b.gs * kBaseMva},
                              {"bs_mvar", b.bs * kBaseMva},
                              {"v_min", b.v_min},
                              {"v_max", b.v_max}});
    }
    j["lines"] = json::array();
    for (const auto& l : c.lines) {
        j["lines"].push_back({{"id", l.id},
                              {"from", l.from},
                              {"to", l.to},
                              {"r", l.r},
                              {"x", l.x},
                              {"b", l.b},
                              {"tap", l.tap},
                              {"p_min_mw", l.p_min * kBaseMva},
                              {"p_max_mw", l.p_max * kBaseMva}});
    }
    j["generators"] = json::array();
    for (const auto& g : c.generators) {
        j["generators"].push_back({{"id", g.id},
                                   {"bus", g.bus},
                                   {"p_mw", g.p * kBaseMva},
                                   {"vg", g.vg},
                                   {"p_min_mw", g.p_min * kBaseMva},
                                   {"p_max_mw", g.p_max * kBaseMva},
                                   {"q_min_mvar", g.q_min * kBaseMva},
                                   {"q_max_mvar", g.q_max * kBaseMva},
                                   {"ramp_down_mw_per_h", g.ramp_down * kBaseMva},
                                   {"ramp_up_mw_per_h", g.ramp_up * kBaseMva},
                                   {"h_s", g.h},
                                   {"xd_prime", g.xd_prime},
                                   {"damping", g.damping},
                                   {"cost", {{"a", g.cost_a}, {"b", g.cost_b}, {"c", g.cost_c}}}});
    }
    j["wind_farms"] = json::array();
    for (const auto& w : c.wind_farms) {
        j["wind_farms"].push_back({{"id", w.id},
                                   {"bus", w.bus},
                                   {"rated_mw", w.rated * kBaseMva},
                                   {"p_mw", w.p * kBaseMva},
                                   {"cut_in_speed", w.cut_in_speed},
                                   {"rated_speed", w.rated_speed},
                                   {"cut_out_speed", w.cut_out_speed},
                                   {"curtail_cost_per_mwh", w.curtail_cost}});
    }
    j["storage"] = json::array();
    for (const auto& e : c.storage) {
        j["storage"].push_back({{"id", e.id},
                                {"bus", e.bus},
                                {"p_charge_max_mw", e.p_charge_max * kBaseMva},
                                {"p_discharge_max_mw", e.p_discharge_max * kBaseMva},
                                {"e_min_mwh", e.e_min * kBaseMva},
                                {"e_max_mwh", e.e_max * kBaseMva},
                                {"e0_mwh", e.e0 * kBaseMva},
                                {"p_mw", e.p * kBaseMva}});
    }
    j["tie_lines"] = json::array();
    for (const auto& t : c.tie_lines) j["tie_lines"].push_back({{"line", t.line_id}, {"sending_bus", t.sending_bus}});
    return j;
}

NetworkCase load_case(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidCase("cannot open case file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidCase("malformed case file " + path.string() + ": " + e.what());
    }
    return case_from_json(j);
}

void save_case(const NetworkCase& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    out << case_to_json(c).dump(2) << '\n';
}

std::string case_hash(const NetworkCase& c) { return hex64(fnv1a(case_to_json(c).dump())); }

}  // namespace tcop::grid
