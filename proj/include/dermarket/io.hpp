#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dermarket/clearing.hpp"
#include "dermarket/der.hpp"
#include "dermarket/generation.hpp"
#include "dermarket/simulator.hpp"
#include "dermarket/stability.hpp"

namespace dermarket {

using json = nlohmann::json;

/// Malformed or invalid configuration; the message names the offending field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parsed configuration document before seeds are applied.
///
///   {
///     "population": {"assets": [{a, x_lo, x_hi, d_lo, d_hi, q, r, c}, ...]}
///                 | {"generate": {"preset"?, m, a, x_ref, x_halfwidth, d_lo, d_hi, q,
///                                 r_per_a, c_per_xref, c_offset}},
///     "supply":     {"beta1", "beta2"},
///     "schedule":   [{"beta2", "periods"}, ...],
///     "simulation": {"horizon"?, "seed"?, "tolerance"?, "threads"?,
///                    "record_states"?, "initial_state"?}
///   }
///
/// Uniform rules are a number (point mass) or a two-element array; reversed
/// endpoints are reordered with a warning.
struct ConfigDocument {
    std::variant<std::vector<DerParams>, GenerationSpec> population;
    SupplyModel supply;
    std::vector<ScheduleSegment> schedule;
    std::optional<std::size_t> horizon;
    std::optional<std::vector<double>> initial_state;
    std::uint64_t seed = 0;
    double tolerance = 0.0;
    unsigned threads = 1;
    bool record_states = true;
    std::vector<std::string> warnings;
};

namespace detail {

inline const json& require(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) throw ConfigError(path + "." + key + ": missing required field");
    return obj.at(key);
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& path) {
    if (!obj.is_object()) throw ConfigError(path + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        bool found = false;
        for (const char* k : known) found = found || key == k;
        if (!found) throw ConfigError(path + "." + key + ": unknown field");
    }
}

inline double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path + ": expected a finite number");
    return d;
}

inline double number_at(const json& obj, const char* key, const std::string& path) {
    return number(require(obj, key, path), path + "." + key);
}

inline std::uint64_t unsigned_at(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(path + ": expected a nonnegative integer");
}

inline UniformRule rule(const json& v, const std::string& path, std::vector<std::string>& warnings) {
    if (v.is_number()) return UniformRule::point(number(v, path));
    if (!v.is_array() || v.size() != 2) throw ConfigError(path + ": expected a number or a [lo, hi] pair");
    double lo = number(v[0], path + "[0]");
    double hi = number(v[1], path + "[1]");
    if (lo > hi) {
        warnings.push_back(path + ": reversed uniform range [" + json(lo).dump() + ", " + json(hi).dump() +
                           "] read as [" + json(hi).dump() + ", " + json(lo).dump() + "]");
        std::swap(lo, hi);
    }
    return {lo, hi};
}

inline DerParams asset(const json& v, const std::string& path) {
    reject_unknown(v, {"a", "x_lo", "x_hi", "d_lo", "d_hi", "q", "r", "c"}, path);
    DerParams p;
    p.a = number_at(v, "a", path);
    p.x_lo = number_at(v, "x_lo", path);
    p.x_hi = number_at(v, "x_hi", path);
    p.d_lo = number_at(v, "d_lo", path);
    p.d_hi = number_at(v, "d_hi", path);
    p.q = number_at(v, "q", path);
    p.r = number_at(v, "r", path);
    p.c = number_at(v, "c", path);
    return p;
}

inline GenerationSpec generation(const json& g, const std::string& path, std::vector<std::string>& warnings) {
    reject_unknown(g,
                   {"preset", "m", "a", "x_ref", "x_halfwidth", "d_lo", "d_hi", "q", "r_per_a", "c_per_xref",
                    "c_offset"},
                   path);
    GenerationSpec s;
    if (g.contains("preset")) {
        const auto& name = g.at("preset");
        if (name == "reference_single") {
            s = reference_single();
        } else if (name == "reference_population") {
            s = reference_population();
        } else {
            throw ConfigError(path + ".preset: unknown preset " + name.dump());
        }
    } else {
        for (const char* key : {"m", "a", "x_ref", "x_halfwidth", "d_lo", "d_hi", "q", "r_per_a", "c_per_xref"}) {
            require(g, key, path);
        }
    }
    if (g.contains("m")) s.m = static_cast<std::size_t>(unsigned_at(g.at("m"), path + ".m"));
    if (g.contains("a")) s.a = rule(g.at("a"), path + ".a", warnings);
    if (g.contains("x_ref")) s.x_ref = rule(g.at("x_ref"), path + ".x_ref", warnings);
    if (g.contains("x_halfwidth")) s.x_halfwidth = number(g.at("x_halfwidth"), path + ".x_halfwidth");
    if (g.contains("d_lo")) s.d_lo = rule(g.at("d_lo"), path + ".d_lo", warnings);
    if (g.contains("d_hi")) s.d_hi = rule(g.at("d_hi"), path + ".d_hi", warnings);
    if (g.contains("q")) s.q = rule(g.at("q"), path + ".q", warnings);
    if (g.contains("r_per_a")) s.r_per_a = number(g.at("r_per_a"), path + ".r_per_a");
    if (g.contains("c_per_xref")) s.c_per_xref = number(g.at("c_per_xref"), path + ".c_per_xref");
    if (g.contains("c_offset")) s.c_offset = number(g.at("c_offset"), path + ".c_offset");
    if (s.m < 1) throw ConfigError(path + ".m: must be >= 1");
    if (!(s.q.lo > 0.0)) throw ConfigError(path + ".q: requires q > 0");
    return s;
}

}  // namespace detail

[[nodiscard]] inline ConfigDocument parse_config(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    ConfigDocument out;

    detail::reject_unknown(doc, {"population", "supply", "schedule", "simulation"}, "config");
    const auto& pop = detail::require(doc, "population", "config");
    detail::reject_unknown(pop, {"assets", "generate"}, "config.population");
    std::optional<SupplyModel> preset_supply;
    if (pop.contains("assets")) {
        const auto& list = pop.at("assets");
        if (!list.is_array() || list.empty()) throw ConfigError("config.population.assets: expected a nonempty array");
        std::vector<DerParams> assets;
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::string path = "config.population.assets[" + std::to_string(i) + "]";
            assets.push_back(detail::asset(list[i], path));
            try {
                validate(assets.back(), i);
            } catch (const InvalidModel& e) {
                throw ConfigError(path + ": " + e.what());
            }
        }
        out.population = std::move(assets);
    } else if (pop.contains("generate")) {
        auto spec = detail::generation(pop.at("generate"), "config.population.generate", out.warnings);
        if (pop.at("generate").contains("preset")) preset_supply = spec.supply;
        out.population = spec;
    } else {
        throw ConfigError("config.population: expected either \"assets\" or \"generate\"");
    }

    if (doc.contains("supply")) {
        const auto& s = doc.at("supply");
        detail::reject_unknown(s, {"beta1", "beta2"}, "config.supply");
        out.supply.beta1 = detail::number_at(s, "beta1", "config.supply");
        out.supply.beta2 = detail::number_at(s, "beta2", "config.supply");
    } else if (preset_supply) {
        out.supply = *preset_supply;
    } else {
        throw ConfigError("config.supply: missing required field");
    }
    try {
        validate(out.supply);
    } catch (const InvalidModel& e) {
        throw ConfigError(std::string("config.") + e.what());
    }

    if (doc.contains("schedule")) {
        const auto& sched = doc.at("schedule");
        if (!sched.is_array()) throw ConfigError("config.schedule: expected an array");
        for (std::size_t i = 0; i < sched.size(); ++i) {
            const std::string path = "config.schedule[" + std::to_string(i) + "]";
            detail::reject_unknown(sched[i], {"beta2", "periods"}, path);
            ScheduleSegment seg;
            seg.beta2 = detail::number_at(sched[i], "beta2", path);
            seg.periods = static_cast<std::size_t>(detail::unsigned_at(detail::require(sched[i], "periods", path),
                                                                       path + ".periods"));
            if (seg.periods < 1) throw ConfigError(path + ".periods: must be >= 1");
            if (!(seg.beta2 > 0.0)) throw ConfigError(path + ".beta2: requires beta2 > 0");
            out.schedule.push_back(seg);
        }
    }

    if (doc.contains("simulation")) {
        const auto& sim = doc.at("simulation");
        const std::string path = "config.simulation";
        detail::reject_unknown(sim, {"horizon", "seed", "tolerance", "threads", "record_states", "initial_state"},
                               path);
        if (sim.contains("horizon")) out.horizon = detail::unsigned_at(sim.at("horizon"), path + ".horizon");
        if (sim.contains("seed")) out.seed = detail::unsigned_at(sim.at("seed"), path + ".seed");
        if (sim.contains("tolerance")) {
            out.tolerance = detail::number(sim.at("tolerance"), path + ".tolerance");
            if (!(out.tolerance > 0.0)) throw ConfigError(path + ".tolerance: must be > 0");
        }
        if (sim.contains("threads")) {
            out.threads = static_cast<unsigned>(detail::unsigned_at(sim.at("threads"), path + ".threads"));
        }
        if (sim.contains("record_states")) {
            if (!sim.at("record_states").is_boolean()) throw ConfigError(path + ".record_states: expected a boolean");
            out.record_states = sim.at("record_states").get<bool>();
        }
        if (sim.contains("initial_state")) {
            const auto& xs = sim.at("initial_state");
            if (!xs.is_array()) throw ConfigError(path + ".initial_state: expected an array");
            std::vector<double> x;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                x.push_back(detail::number(xs[i], path + ".initial_state[" + std::to_string(i) + "]"));
            }
            out.initial_state = std::move(x);
        }
    }
    return out;
}

[[nodiscard]] inline ConfigDocument load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(doc);
}

/// Applies the seed (generating the population if needed) and checks sizes.
[[nodiscard]] inline ScenarioConfig materialize(const ConfigDocument& doc) {
    ScenarioConfig cfg;
    cfg.supply = doc.supply;
    cfg.schedule = doc.schedule;
    cfg.horizon = doc.horizon;
    cfg.seed = doc.seed;
    cfg.clearing.tol = doc.tolerance;
    cfg.clearing.threads = doc.threads;
    cfg.record_states = doc.record_states;
    if (const auto* assets = std::get_if<std::vector<DerParams>>(&doc.population)) {
        cfg.population = *assets;
        if (doc.initial_state) cfg.initial_state = doc.initial_state;
    } else {
        auto spec = std::get<GenerationSpec>(doc.population);
        spec.seed = doc.seed;
        try {
            auto gen = generate_population(spec);
            cfg.population = std::move(gen.population);
            cfg.initial_state = doc.initial_state ? *doc.initial_state : gen.initial.x;
        } catch (const InvalidModel& e) {
            throw ConfigError(std::string("config.population.generate: ") + e.what());
        }
    }
    if (cfg.initial_state && cfg.initial_state->size() != cfg.population.size()) {
        throw ConfigError("config.simulation.initial_state: has " + std::to_string(cfg.initial_state->size()) +
                          " entries for " + std::to_string(cfg.population.size()) + " assets");
    }
    try {
        (void)resolve_schedule(cfg);
    } catch (const InvalidModel& e) {
        throw ConfigError(std::string("config.") + e.what());
    }
    return cfg;
}

/// Explicit-population config that re-ingests to the same scenario.
[[nodiscard]] inline json to_config_json(const ScenarioConfig& cfg) {
    json assets = json::array();
    for (const auto& p : cfg.population) {
        assets.push_back({{"a", p.a},
                          {"x_lo", p.x_lo},
                          {"x_hi", p.x_hi},
                          {"d_lo", p.d_lo},
                          {"d_hi", p.d_hi},
                          {"q", p.q},
                          {"r", p.r},
                          {"c", p.c}});
    }
    json schedule = json::array();
    for (const auto& s : cfg.schedule) schedule.push_back({{"beta2", s.beta2}, {"periods", s.periods}});
    json sim = {{"seed", cfg.seed}, {"record_states", cfg.record_states}, {"threads", cfg.clearing.threads}};
    if (cfg.clearing.tol > 0.0) sim["tolerance"] = cfg.clearing.tol;
    if (cfg.horizon) sim["horizon"] = *cfg.horizon;
    if (cfg.initial_state) sim["initial_state"] = *cfg.initial_state;
    return {{"population", {{"assets", assets}}},
            {"supply", {{"beta1", cfg.supply.beta1}, {"beta2", cfg.supply.beta2}}},
            {"schedule", schedule},
            {"simulation", sim}};
}

/// Shortest decimal that round-trips to the same double.
[[nodiscard]] inline std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

[[nodiscard]] inline std::vector<std::string> csv_columns(const TimeSeries& ts) {
    std::vector<std::string> cols = {"period", "beta2", "lambda", "aggregate_demand", "supply", "kkt_residual"};
    if (!ts.states.empty()) {
        for (std::size_t i = 0; i < ts.assets; ++i) cols.push_back("x_" + std::to_string(i + 1));
    }
    return cols;
}

/// Row k holds the clearing of period k and the state x(k) it started from.
/// With states recorded a final row carries x(horizon) and empty market cells.
inline void write_csv(std::ostream& os, const TimeSeries& ts) {
    const auto cols = csv_columns(ts);
    for (std::size_t j = 0; j < cols.size(); ++j) os << (j ? "," : "") << cols[j];
    os << '\n';
    const bool states = !ts.states.empty();
    for (std::size_t k = 0; k < ts.horizon(); ++k) {
        os << k << ',' << format_number(ts.beta2[k]) << ',' << format_number(ts.lambda[k]) << ','
           << format_number(ts.aggregate_demand[k]) << ',' << format_number(ts.supply[k]) << ','
           << format_number(ts.kkt_residual[k]);
        if (states) {
            for (double x : ts.states[k]) os << ',' << format_number(x);
        }
        os << '\n';
    }
    if (states) {
        os << ts.horizon() << ",,,,,";
        for (double x : ts.states.back()) os << ',' << format_number(x);
        os << '\n';
    }
}

[[nodiscard]] inline json to_json(const TimeSeries& ts) {
    std::vector<std::size_t> period(ts.horizon());
    for (std::size_t k = 0; k < period.size(); ++k) period[k] = k;
    json segs = json::array();
    for (const auto& [first, len] : ts.segments) segs.push_back({first, len});
    json out = {{"assets", ts.assets},
                {"period", period},
                {"beta2", ts.beta2},
                {"lambda", ts.lambda},
                {"aggregate_demand", ts.aggregate_demand},
                {"supply", ts.supply},
                {"kkt_residual", ts.kkt_residual},
                {"gap", ts.gap},
                {"segments", segs}};
    if (!ts.states.empty()) out["states"] = ts.states;
    return out;
}

[[nodiscard]] inline json to_json(const ConvergenceReport& report) {
    json out = json::array();
    for (std::size_t i = 0; i < report.size(); ++i) {
        const auto& s = report[i];
        out.push_back({{"segment", i},
                       {"first_period", s.first_period},
                       {"length", s.length},
                       {"beta2", s.beta2},
                       {"classification", to_string(s.classification)},
                       {"settle_time", s.settle_time ? json(*s.settle_time) : json(nullptr)},
                       {"decay_rate", s.decay_rate ? json(*s.decay_rate) : json(nullptr)},
                       {"amplitude", s.amplitude},
                       {"mean_price", s.mean_price}});
    }
    return out;
}

[[nodiscard]] inline json to_json(const Certificate& cert) {
    double lo = cert.margins.empty() ? 0.0 : cert.margins.front();
    double hi = lo;
    for (double v : cert.margins) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {{"kind", cert.kind == Certificate::Kind::single ? "single" : "decoupled"},
            {"certified", cert.certified},
            {"margins", cert.margins},
            {"margin_min", lo},
            {"margin_max", hi},
            {"factors", cert.factors},
            {"contraction_factor", cert.contraction_factor},
            {"worst_asset", cert.worst},
            {"phi", cert.phi},
            {"w1", cert.w1},
            {"w2", cert.w2},
            {"epsilon", cert.epsilon}};
}

[[nodiscard]] inline json to_json(const ClearingOutcome& o) {
    return {{"lambda_star", o.lambda_star},
            {"s_star", o.s_star},
            {"d_star", o.d_star},
            {"gap", o.gap},
            {"kkt_residual", o.kkt_residual},
            {"iterations", o.iterations},
            {"bracket", {o.bracket_lo, o.bracket_hi}}};
}

/// Manifest naming each emitted series for external plotting tools.
[[nodiscard]] inline json series_manifest(const TimeSeries& ts, const std::string& csv_name) {
    json series = json::array({
        {{"name", "base_price"}, {"column", "beta2"}, {"unit", "price"}},
        {{"name", "clearing_price"}, {"column", "lambda"}, {"unit", "price"}},
        {{"name", "aggregate_demand"}, {"column", "aggregate_demand"}, {"unit", "power"}},
        {{"name", "supply"}, {"column", "supply"}, {"unit", "power"}},
        {{"name", "kkt_residual"}, {"column", "kkt_residual"}, {"unit", "mixed"}},
    });
    if (!ts.states.empty()) {
        series.push_back({{"name", "states"},
                          {"columns", {"x_1", "x_" + std::to_string(ts.assets)}},
                          {"unit", "energy"}});
    }
    return {{"csv", csv_name}, {"columns", csv_columns(ts)}, {"series", series}, {"periods", ts.horizon()}};
}

}  // namespace dermarket
