// Command-line front end: single runs, tau sweeps and the built-in
// verification suites.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splitsim/config.hpp"
#include "splitsim/metrics.hpp"
#include "splitsim/sim.hpp"
#include "splitsim/trace.hpp"
#include "splitsim/verify.hpp"

namespace {

namespace fs = std::filesystem;
using namespace splitsim;

std::string format_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string config_stem(const std::string& path) {
    const fs::path p(path);
    const std::string stem = p.stem().string();
    return stem.empty() ? "run" : stem;
}

struct RunOutput {
    fs::path dir;
    SimResult result;
};

RunOutput execute_run(const ExperimentConfig& cfg, const std::string& run_id,
                      const std::string& out_dir, const std::string& trace_path) {
    fs::path dir = fs::path(out_dir) / run_id;
    fs::create_directories(dir);

    SimResult result;
    if (trace_path.empty()) {
        result = run_experiment(cfg);
    } else {
        TraceWriter writer(trace_path);
        result = run_experiment(cfg, false, &writer);
    }

    {
        std::ofstream snap(dir / "config.snapshot");
        if (!snap) throw Error("cannot write " + (dir / "config.snapshot").string());
        snap << cfg.snapshot();
    }
    write_records(result.records, (dir / "records.csv").string());

    std::vector<std::pair<std::string, std::string>> summary;
    summary.emplace_back("rounds", std::to_string(cfg.rounds));
    summary.emplace_back("final_accuracy", format_g(result.final_accuracy));
    summary.emplace_back("total_simulated_time", format_g(result.total_simulated_time));
    summary.emplace_back("cut_layer", std::to_string(result.cut));
    summary.emplace_back("params_total", std::to_string(result.dims.total));
    summary.emplace_back("params_client", std::to_string(result.dims.client));
    summary.emplace_back("params_server", std::to_string(result.dims.server));
    write_summary(summary, (dir / "summary.txt").string());

    return {std::move(dir), std::move(result)};
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed_override,
            const std::string& out_dir, const std::string& trace_path) {
    ExperimentConfig cfg = ExperimentConfig::load(config_path);
    if (seed_override) cfg.seed = *seed_override;
    cfg.validate();

    const std::string run_id = config_stem(config_path) + "-seed" + std::to_string(cfg.seed);
    const RunOutput out = execute_run(cfg, run_id, out_dir, trace_path);
    std::cout << "run directory:        " << out.dir.string() << "\n";
    std::cout << "final accuracy:       " << format_g(out.result.final_accuracy) << "\n";
    std::cout << "total simulated time: " << format_g(out.result.total_simulated_time) << "\n";
    return 0;
}

int cmd_sweep_tau(const std::string& config_path, const std::vector<long long>& taus,
                  double target, std::optional<std::uint64_t> seed_override,
                  const std::string& out_dir) {
    if (taus.empty()) throw Error("sweep needs at least one tau value");
    std::set<long long> unique;
    for (long long tau : taus) {
        if (tau < 1) throw Error("tau values must be >= 1");
        if (!unique.insert(tau).second) {
            throw Error("duplicate tau value " + std::to_string(tau));
        }
    }

    ExperimentConfig base = ExperimentConfig::load(config_path);
    if (seed_override) base.seed = *seed_override;
    base.validate();

    const std::string stem = config_stem(config_path);
    std::map<long long, std::vector<RunRecord>> runs;
    for (long long tau : unique) {
        ExperimentConfig cfg = base;
        cfg.tau = tau;
        cfg.validate();
        const std::string run_id =
            stem + "-tau" + std::to_string(tau) + "-seed" + std::to_string(cfg.seed);
        const RunOutput out = execute_run(cfg, run_id, out_dir, "");
        std::cout << "tau=" << tau << " -> " << out.dir.string()
                  << " (final accuracy " << format_g(out.result.final_accuracy) << ")\n";
        runs[tau] = out.result.records;
    }

    const std::vector<SpeedupRow> rows = speedup_report(runs, target);
    const fs::path report_dir =
        fs::path(out_dir) / (stem + "-sweep-seed" + std::to_string(base.seed));
    fs::create_directories(report_dir);
    const fs::path report_path = report_dir / "speedup.csv";
    write_speedup_report(rows, report_path.string());

    std::cout << "\ntau  rounds_to_" << target << "  ratio_vs_tau1\n";
    for (const SpeedupRow& row : rows) {
        std::cout << row.tau << "    ";
        if (row.rounds) {
            std::cout << *row.rounds;
        } else {
            std::cout << "not reached";
        }
        std::cout << "    ";
        if (row.ratio) {
            std::cout << format_g(*row.ratio);
        } else {
            std::cout << "-";
        }
        std::cout << "\n";
    }
    std::cout << "report: " << report_path.string() << "\n";
    return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
    std::vector<PropertyCheck> checks;
    if (suite == "lemma1") {
        checks = lemma1_suite(seed);
    } else if (suite == "straggler") {
        checks = straggler_suite();
    } else if (suite == "reduction") {
        checks = reduction_suite(seed);
    } else {
        std::cerr << "unknown suite '" << suite
                  << "'; expected one of: lemma1, straggler, reduction\n";
        return 2;
    }

    bool all_pass = true;
    for (const PropertyCheck& check : checks) {
        const double margin = check.bound - check.measured;
        std::cout << (check.pass ? "PASS" : "FAIL") << "  " << check.name
                  << "  measured=" << format_g(check.measured)
                  << " bound=" << format_g(check.bound) << " margin=" << format_g(margin) << "\n";
        all_pass = all_pass && check.pass;
    }
    std::cout << (all_pass ? "all properties hold" : "property failures detected") << "\n";
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete-time simulator for split federated learning with "
                 "two-point zeroth-order updates and unbalanced server steps"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "runs";
    std::string trace_path;
    std::string taus_arg = "1,2,4";
    std::string suite;
    double target = 0.85;
    std::optional<std::uint64_t> seed_override;
    std::uint64_t verify_seed = 1;

    CLI::App* run = app.add_subcommand("run", "Execute one experiment config");
    run->add_option("config", config_path, "experiment config file")->required();
    run->add_option("--seed", seed_override, "override run.seed");
    run->add_option("--out", out_dir, "output directory (default runs)");
    run->add_option("--trace", trace_path, "write a binary round-trace to this file");

    CLI::App* sweep = app.add_subcommand("sweep-tau", "Run a tau sweep and emit a speedup report");
    sweep->add_option("config", config_path, "experiment config file")->required();
    sweep->add_option("--taus", taus_arg, "comma-separated tau values (default 1,2,4)");
    sweep->add_option("--target", target, "accuracy target for rounds-to-target (default 0.85)");
    sweep->add_option("--seed", seed_override, "override run.seed");
    sweep->add_option("--out", out_dir, "output directory (default runs)");

    CLI::App* verify = app.add_subcommand("verify", "Run a built-in verification suite");
    verify->add_option("suite", suite, "one of: lemma1, straggler, reduction")->required();
    verify->add_option("--seed", verify_seed, "suite seed (default 1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (run->parsed()) {
            return cmd_run(config_path, seed_override, out_dir, trace_path);
        }
        if (sweep->parsed()) {
            std::vector<long long> taus;
            for (const std::string& cell : splitsim::detail::split_csv_list(taus_arg)) {
                long long tau = 0;
                if (!splitsim::detail::parse_number(cell, tau)) {
                    throw splitsim::Error("--taus: '" + cell + "' is not an integer");
                }
                taus.push_back(tau);
            }
            return cmd_sweep_tau(config_path, taus, target, seed_override, out_dir);
        }
        if (verify->parsed()) {
            return cmd_verify(suite, verify_seed);
        }
    } catch (const splitsim::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const splitsim::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
