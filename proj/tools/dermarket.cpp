// dermarket: clear, simulate and certify multi-period asset markets.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "dermarket/clearing.hpp"
#include "dermarket/io.hpp"
#include "dermarket/simulator.hpp"
#include "dermarket/stability.hpp"

namespace fs = std::filesystem;
using namespace dermarket;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

class IoFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string output;
    bool json = false;
    unsigned threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "Scenario config (JSON)")->required();
    cmd->add_option("--seed", args.seed, "Override simulation.seed");
    cmd->add_option("--output", args.output, "Output path");
    cmd->add_flag("--json", args.json, "Machine-readable output");
    cmd->add_option("--threads", args.threads, "Threads for bid evaluation")->check(CLI::PositiveNumber);
}

ScenarioConfig load(const CommonArgs& args) {
    auto doc = load_config(args.config);
    for (const auto& w : doc.warnings) spdlog::warn("{}", w);
    if (args.seed) doc.seed = *args.seed;
    if (args.threads > 1) doc.threads = args.threads;
    auto cfg = materialize(doc);
    spdlog::info("loaded {} assets from {}", cfg.population.size(), args.config);
    return cfg;
}

/// Writes to --output when given, stdout otherwise.
void emit(const CommonArgs& args, const std::string& text) {
    if (args.output.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(args.output);
    if (!out) throw IoFailure("cannot write " + args.output);
    out << text;
}

int cmd_generate(const CommonArgs& args, bool emit_config) {
    auto cfg = load(args);
    std::ostringstream os;
    if (emit_config || args.json) {
        os << to_config_json(cfg).dump(2) << '\n';
    } else {
        os << "asset,a,x_lo,x_hi,d_lo,d_hi,q,r,c,x0\n";
        for (std::size_t i = 0; i < cfg.population.size(); ++i) {
            const auto& p = cfg.population[i];
            os << i + 1;
            for (double v : {p.a, p.x_lo, p.x_hi, p.d_lo, p.d_hi, p.q, p.r, p.c}) os << ',' << format_number(v);
            os << ',' << (cfg.initial_state ? format_number((*cfg.initial_state)[i]) : std::string());
            os << '\n';
        }
    }
    emit(args, os.str());
    return kOk;
}

int cmd_clear(const CommonArgs& args) {
    auto cfg = load(args);
    validate_population(cfg.population);
    MarketState x;
    x.x = cfg.initial_state ? *cfg.initial_state : seeded_initial_state(cfg.population, cfg.seed).x;
    const auto res = closed_loop_step(cfg.population, cfg.supply, x, cfg.clearing);
    const auto& o = res.outcome;
    std::ostringstream os;
    if (args.json) {
        auto j = to_json(o);
        j["beta2"] = cfg.supply.beta2;
        j["state"] = x.x;
        j["next_state"] = res.next.x;
        j["consumption"] = res.consumption;
        os << j.dump(2) << '\n';
    } else {
        os << "lambda_star  " << format_number(o.lambda_star) << '\n'
           << "s_star       " << format_number(o.s_star) << '\n'
           << "gap          " << format_number(o.gap) << '\n'
           << "kkt_residual " << format_number(o.kkt_residual) << '\n'
           << "iterations   " << o.iterations << '\n';
    }
    emit(args, os.str());
    return kOk;
}

int cmd_simulate(const CommonArgs& args) {
    auto cfg = load(args);
    const auto ts = run_scenario(cfg);
    const auto report = analyze(ts);

    const fs::path csv = args.output.empty() ? fs::path("timeseries.csv") : fs::path(args.output);
    const fs::path dir = csv.has_parent_path() ? csv.parent_path() : fs::path(".");
    auto write = [](const fs::path& p, const auto& fn) {
        std::ofstream out(p);
        if (!out) throw IoFailure("cannot write " + p.string());
        fn(out);
        if (!out) throw IoFailure("write failed for " + p.string());
    };
    write(csv, [&](std::ostream& os) { write_csv(os, ts); });
    write(dir / "series.json", [&](std::ostream& os) { os << series_manifest(ts, csv.filename().string()).dump(2) << '\n'; });
    const fs::path stem = dir / csv.stem();
    write(fs::path(stem.string() + ".report.json"), [&](std::ostream& os) { os << to_json(report).dump(2) << '\n'; });
    if (args.json) {
        write(fs::path(stem.string() + ".json"), [&](std::ostream& os) { os << to_json(ts).dump() << '\n'; });
    }
    spdlog::info("wrote {} periods to {}", ts.horizon(), csv.string());

    if (args.json) {
        std::cout << to_json(report).dump(2) << '\n';
    } else {
        std::cout << std::left << std::setw(9) << "segment" << std::setw(10) << "beta2" << std::setw(13) << "class"
                  << std::setw(8) << "settle" << std::setw(22) << "rho_hat" << "amplitude" << '\n';
        for (std::size_t i = 0; i < report.size(); ++i) {
            const auto& s = report[i];
            std::cout << std::setw(9) << i << std::setw(10) << format_number(s.beta2) << std::setw(13)
                      << to_string(s.classification) << std::setw(8)
                      << (s.settle_time ? std::to_string(*s.settle_time) : std::string("-")) << std::setw(22)
                      << (s.decay_rate ? format_number(*s.decay_rate) : std::string("-")) << format_number(s.amplitude)
                      << '\n';
        }
    }
    return kOk;
}

int cmd_certify(const CommonArgs& args) {
    auto cfg = load(args);
    validate_population(cfg.population);
    const auto cert = cfg.population.size() == 1 ? certify_single(cfg.population.front(), cfg.supply)
                                                 : certify_multi(cfg.population, cfg.supply);
    std::ostringstream os;
    if (args.json) {
        os << to_json(cert).dump(2) << '\n';
    } else {
        const auto j = to_json(cert);
        os << "verdict             " << (cert.certified ? "certified-stable" : "not-certified") << '\n'
           << "kind                " << j["kind"].get<std::string>() << '\n'
           << "contraction_factor  " << format_number(cert.contraction_factor) << '\n'
           << "worst_asset         " << cert.worst + 1 << '\n'
           << "epsilon             " << format_number(cert.epsilon) << '\n'
           << "margin range        [" << format_number(j["margin_min"].get<double>()) << ", "
           << format_number(j["margin_max"].get<double>()) << "]\n";
        double phi_lo = cert.phi.front();
        double phi_hi = phi_lo;
        for (double v : cert.phi) {
            phi_lo = std::min(phi_lo, v);
            phi_hi = std::max(phi_hi, v);
        }
        os << "phi range           [" << format_number(phi_lo) << ", " << format_number(phi_hi) << "]\n";
        os << "asset,margin\n";
        for (std::size_t i = 0; i < cert.margins.size(); ++i) {
            os << i + 1 << ',' << format_number(cert.margins[i]) << '\n';
        }
    }
    emit(args, os.str());
    return kOk;
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("dermarket");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("MARKET_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();

    CLI::App app{"Multi-period asset market: clearing, simulation and stability certificates"};
    app.require_subcommand(1);

    CommonArgs gen_args, clear_args, sim_args, cert_args;
    bool emit_config = false;
    auto* gen = app.add_subcommand("generate", "Materialise a population (seeded) from a config");
    add_common(gen, gen_args);
    gen->add_flag("--emit-config", emit_config, "Write an explicit-population config");
    auto* clr = app.add_subcommand("clear", "Clear one period at the configured state");
    add_common(clr, clear_args);
    auto* sim = app.add_subcommand("simulate", "Run the scenario and classify each schedule segment");
    add_common(sim, sim_args);
    auto* cert = app.add_subcommand("certify", "Print the stability certificate of a population");
    add_common(cert, cert_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_args, emit_config);
        if (clr->parsed()) return cmd_clear(clear_args);
        if (sim->parsed()) return cmd_simulate(sim_args);
        if (cert->parsed()) return cmd_certify(cert_args);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kConfigError;
    } catch (const InvalidModel& e) {
        spdlog::error("{}", e.what());
        return kConfigError;
    } catch (const ScenarioFailure& e) {
        spdlog::error("{} (period {})", e.what(), e.period);
        return kRuntimeError;
    } catch (const ClearingFailure& e) {
        spdlog::error("{} (bracket [{}, {}])", e.what(), e.bracket_lo, e.bracket_hi);
        return kRuntimeError;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kRuntimeError;
    }
    return kConfigError;
}
