// Copyright 2026 The subnet-tune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end. Exit codes: 0 success, 1 runtime or config
// failure (including a failed gradient check), 2 usage error.

#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "subnet_tune/config_io.hpp"
#include "subnet_tune/experiment.hpp"
#include "subnet_tune/gradcheck.hpp"
#include "subnet_tune/report_io.hpp"

namespace subnet_tune {

inline constexpr const char* kVersion = "0.1.0";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// --help or --version; `text` is what CLI11 would print.
struct HelpRequested {
    std::string text;
};

struct CliOptions {
    std::string command;
    std::string config;
    std::string out;
    std::size_t threads = 1;
    std::optional<std::uint64_t> seed;
    bool force = false;
    std::vector<std::string> reports;  // compare, report

    // sweep grid
    std::vector<std::string> grid_strategies;
    std::vector<double> grid_p;
    std::vector<double> grid_ur;

    // gradcheck
    double tolerance = 1e-4;
    std::size_t trials = 3;
};

namespace detail {

inline std::size_t threads_from_env() {
    const char* v = std::getenv("SUBNET_TUNE_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) throw UsageError(std::string("SUBNET_TUNE_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<std::size_t>(n);
}

}  // namespace detail

/// Parses argv into options and checks cross-flag rules. Throws UsageError
/// on any problem, HelpRequested for --help and --version.
inline CliOptions parse_and_validate(int argc, const char* const* argv) {
    CliOptions o;
    CLI::App app{"subnet-tune: subnetwork fine-tuning strategies on synthetic tasks", "subnet-tune"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", kVersion);
    std::optional<std::size_t> threads;

    auto* run = app.add_subcommand("run", "run the benchmark described by a config file");
    auto* sweep = app.add_subcommand("sweep", "run a strategy x p x ur grid over a config's tasks");
    auto* compare = app.add_subcommand("compare", "compare two or more saved reports");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
    auto* report = app.add_subcommand("report", "print a saved report, optionally re-exporting its tables");

    for (auto* sc : {run, sweep}) {
        sc->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sc->add_option("--out", o.out, "output directory")->required();
        sc->add_option("--threads", threads, "worker threads (default: $SUBNET_TUNE_THREADS or 1)")
            ->check(CLI::PositiveNumber);
        sc->add_option("--seed", o.seed, "replace the config's seed list with this single seed");
        sc->add_flag("--force", o.force, "reuse a non-empty output directory");
    }
    sweep->add_option("--strategy", o.grid_strategies, "strategy kinds in the grid")->delimiter(',')->required();
    sweep->add_option("--p", o.grid_p, "drop fractions")->delimiter(',')->required();
    sweep->add_option("--ur", o.grid_ur, "update ratios (cyclic strategies)")->delimiter(',');

    compare->add_option("reports", o.reports, "report.json files or run directories")->required();
    compare->add_option("--out", o.out, "write the comparison CSV here");

    gradcheck->add_option("--seed", o.seed, "model and data seed");
    gradcheck->add_option("--tolerance", o.tolerance, "maximum relative error")->check(CLI::PositiveNumber);
    gradcheck->add_option("--trials", o.trials, "random models per head kind")->check(CLI::PositiveNumber);

    report->add_option("report", o.reports, "report.json file or run directory")->required()->expected(1);
    report->add_option("--out", o.out, "re-export tables into this directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        std::ostringstream text;
        app.exit(e, text, text);
        throw HelpRequested{text.str()};
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }
    o.command = app.get_subcommands().front()->get_name();
    o.threads = threads ? *threads : (o.command == "run" || o.command == "sweep" ? detail::threads_from_env() : 1);

    if (o.command == "sweep") {
        for (const auto& s : o.grid_strategies) {
            try {
                if (strategy_kind_from_string(s) == StrategyKind::vanilla)
                    throw UsageError("sweep: vanilla has no p; it is always included as the reference");
            } catch (const ConfigError& e) {
                throw UsageError(std::string("sweep: ") + e.what());
            }
        }
        if (o.grid_strategies.empty() || o.grid_p.empty()) throw UsageError("sweep: the grid is empty");
        for (double p : o.grid_p)
            if (!(p >= 0.0 && p < 1.0)) throw UsageError("sweep: p=" + std::to_string(p) + " outside [0,1)");
        bool cyclic = false;
        for (const auto& s : o.grid_strategies) {
            StrategyConfig c;
            c.kind = strategy_kind_from_string(s);
            cyclic = cyclic || c.uses_schedule();
        }
        if (cyclic && o.grid_ur.empty()) throw UsageError("sweep: cyclic strategies need --ur values");
        for (double ur : o.grid_ur)
            if (!(ur > 0.0 && ur <= 0.5)) throw UsageError("sweep: ur=" + std::to_string(ur) + " outside (0,0.5]");
    }
    if (o.command == "compare" && o.reports.size() < 2) throw UsageError("compare: needs at least two reports");
    return o;
}

/// Strategies for a sweep: vanilla reference first, then the grid in
/// strategy-major, p, ur order.
inline std::vector<StrategyConfig> sweep_grid(const CliOptions& o) {
    std::vector<StrategyConfig> out{StrategyConfig{}};
    for (const auto& name : o.grid_strategies) {
        const StrategyKind kind = strategy_kind_from_string(name);
        for (double p : o.grid_p) {
            StrategyConfig c;
            c.kind = kind;
            c.p = p;
            if (!c.uses_schedule()) {
                out.push_back(c);
                continue;
            }
            for (double ur : o.grid_ur) {
                c.ur = ur;
                out.push_back(c);
            }
        }
    }
    return out;
}

/// Distribution of the primary metric per grid point, grouped by p.
inline void write_p_distribution(const AggregateReport& rep, const std::vector<StrategyConfig>& grid,
                                 std::ostream& out) {
    out << "p,strategy,ur,task,size,metric,n,mean,std,min,max\n";
    const auto labels = strategy_labels(grid);
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a].p < grid[b].p; });
    char buf[256];
    for (std::size_t i : order) {
        const auto& g = grid[i];
        if (g.kind == StrategyKind::vanilla) continue;
        for (const auto& c : rep.cells) {
            if (c.strategy != labels[i]) continue;
            const auto& s = c.primary().in_domain;
            std::snprintf(buf, sizeof buf, "%g,%s,%s,", g.p, to_string(g.kind),
                          g.uses_schedule() ? std::to_string(g.ur).c_str() : "");
            out << buf << csv_escape(c.task) << "," << c.size << "," << c.primary_metric << "," << s.n;
            std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f", s.mean, s.std, s.min, s.max);
            out << buf << "\n";
        }
    }
}

namespace detail {

inline std::string iso_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

inline void prepare_out_dir(const std::filesystem::path& dir, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ConfigError("output path '" + dir.string() + "' is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw ConfigError("output directory '" + dir.string() + "' is not empty (use --force to reuse it)");
    }
    fs::create_directories(dir);
}

inline int run_experiment_command(const CliOptions& o, ExperimentConfig cfg, const nlohmann::json& extra,
                                  std::ostream& out, const std::vector<StrategyConfig>* grid) {
    namespace fs = std::filesystem;
    if (o.seed) cfg.seeds = {*o.seed};
    cfg.validate();
    const fs::path dir(o.out);
    prepare_out_dir(dir, o.force);

    std::ofstream log(dir / "log.txt");
    const auto t0 = std::chrono::steady_clock::now();
    const std::string started = iso_now();
    log << "started " << started << "\n";
    out << "pretraining on '" << cfg.pretrain.task.name << "' (" << cfg.pretrain.samples << " samples)\n";
    const ExperimentContext ctx = prepare_experiment(cfg);
    log << "pretrain held-out score " << ctx.pretrain_accuracy << "\n";

    const auto progress = [&](const RunProgress& p) {
        const RunRecord& r = *p.last;
        log << "[" << p.done << "/" << p.total << "] " << r.strategy << " " << r.task << " n=" << r.size
            << " seed=" << r.seed;
        if (r.aborted) log << " ABORTED: " << r.error;
        else
            for (const auto& [m, v] : r.in_domain) log << " " << m << "=" << v;
        log << "\n";
        log.flush();
    };
    const AggregateReport rep = run_experiment(ctx, o.threads, progress);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_report(rep, dir);
    if (grid) {
        std::ofstream f(dir / "tables" / "p_distribution.csv");
        write_p_distribution(rep, *grid, f);
    }

    nlohmann::json manifest{{"tool", "subnet-tune"},
                            {"version", kVersion},
                            {"command", o.command},
                            {"config_path", o.config},
                            {"config", config_to_json(cfg)},
                            {"threads", o.threads},
                            {"started", started},
                            {"finished", iso_now()},
                            {"wall_seconds", secs},
                            {"pretrain_heldout_score", ctx.pretrain_accuracy},
                            {"runs", rep.runs.size()}};
    if (extra.is_object()) manifest.update(extra);
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
    std::size_t aborted = 0;
    for (const auto& r : rep.runs) aborted += r.aborted;
    log << "finished in " << secs << " s, " << rep.runs.size() << " runs, " << aborted << " aborted\n";
    out << format_report_text(rep);
    out << "wrote " << dir.string() << " (" << rep.runs.size() << " runs, " << aborted << " aborted)\n";
    return 0;
}

inline int gradcheck_command(const CliOptions& o, std::ostream& out) {
    const std::uint64_t seed = o.seed.value_or(0);
    GradCheckOptions opt;
    opt.tolerance = o.tolerance;
    bool ok = true;
    char buf[160];
    auto print = [&](const std::string& what, const GradCheckReport& r) {
        for (const auto& p : r.params) {
            std::snprintf(buf, sizeof buf, "%-28s %-14s max_rel_err=%.3e %s\n", what.c_str(), p.name.c_str(),
                          p.max_rel_error, p.passed ? "ok" : "FAIL");
            out << buf;
        }
        ok = ok && r.passed;
    };
    for (std::size_t trial = 0; trial < o.trials; ++trial) {
        Rng rng = Rng(seed).derive(trial);
        for (Head head : {Head::classification(3), Head::regression()}) {
            MlpModel m = MlpModel::create(5, {8, 6}, Activation::tanh, head, rng);
            Batch b{gaussian_init({8, 5}, 0.0, 1.0, rng), std::vector<double>(8)};
            for (double& t : b.targets)
                t = head.kind == HeadKind::regression ? rng.normal(0.0, 1.0) : static_cast<double>(rng.below(3));
            const std::string tag = std::string(head.kind == HeadKind::regression ? "mse" : "xent") + " trial " +
                                    std::to_string(trial);
            print(tag, gradient_check(m, b, opt));
            // Mixed weights: move W away from its anchor so the mixing matters.
            m.for_each_param([&](ParamTensor& t) {
                for (double& v : t.value.flat()) v += rng.normal(0.0, 0.1);
            });
            const MaskSet mask = bernoulli_mask_set(m, 0.7, rng);
            print(tag + " mixed p=0.3", mixed_gradient_check(m, b, mask.masks, 0.3, opt));
        }
    }
    out << (ok ? "gradient check passed\n" : "gradient check FAILED\n");
    return ok ? 0 : 1;
}

}  // namespace detail

/// Runs the parsed command. Output goes to `out`, diagnostics to `err`.
inline int execute(const CliOptions& o, std::ostream& out, std::ostream& err) {
    try {
        if (o.command == "run") {
            return detail::run_experiment_command(o, load_config(o.config), {}, out, nullptr);
        }
        if (o.command == "sweep") {
            ExperimentConfig cfg = load_config(o.config);
            cfg.strategies = sweep_grid(o);
            nlohmann::json grid{{"strategies", o.grid_strategies}, {"p", o.grid_p}, {"ur", o.grid_ur},
                                {"cells", cfg.strategies.size() - 1}};
            return detail::run_experiment_command(o, cfg, {{"grid", grid}}, out, &cfg.strategies);
        }
        if (o.command == "compare") {
            std::vector<AggregateReport> reps;
            for (const auto& p : o.reports) reps.push_back(load_report(p));
            const auto rows = compare_reports(reps);
            if (!o.out.empty()) {
                std::ofstream f(o.out);
                if (!f) throw ConfigError("cannot write '" + o.out + "'");
                write_comparison_csv(rows, f);
            }
            write_comparison_csv(rows, out);
            return 0;
        }
        if (o.command == "gradcheck") return detail::gradcheck_command(o, out);
        if (o.command == "report") {
            const AggregateReport rep = load_report(o.reports.front());
            out << format_report_text(rep);
            if (!o.out.empty()) write_report(rep, o.out);
            return 0;
        }
        throw UsageError("unknown command '" + o.command + "'");
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CliOptions o;
    try {
        o = parse_and_validate(argc, argv);
    } catch (const HelpRequested& h) {
        out << h.text;
        return 0;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n"
            << "run 'subnet-tune --help' for usage\n";
        return 2;
    }
    return execute(o, out, err);
}

}  // namespace subnet_tune
