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


#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "subnet_tune/config_io.hpp"
#include "subnet_tune/experiment.hpp"
#include "subnet_tune/report_io.hpp"

using namespace subnet_tune;

namespace {

StrategyConfig strat(StrategyKind k, double p = 0.0, double ur = 0.1) {
    StrategyConfig c;
    c.kind = k;
    c.p = p;
    c.ur = ur;
    return c;
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.name = "tiny";
    c.model.hidden = {8};
    c.pretrain.task.name = "source";
    c.pretrain.task.head = Head::classification(3);
    c.pretrain.task.input_dim = 4;
    c.pretrain.samples = 400;
    c.pretrain.epochs = 1;
    c.pretrain.batch_size = 32;
    c.pretrain.optimizer.kind = OptimizerKind::adamw;
    c.pretrain.optimizer.lr = 0.01;
    c.pretrain.seed = 1;
    TaskSpec t;
    t.name = "target";
    t.input_dim = 4;
    t.head_seed = 5;
    t.label_noise = 0.1;
    c.finetune.tasks = {t};
    c.finetune.sizes = {40};
    c.finetune.pool = 120;
    c.finetune.eval_samples = 60;
    c.finetune.epochs = 2;
    c.finetune.batch_size = 8;
    c.finetune.optimizer.lr = 0.05;
    c.finetune.ood_shift = {};
    c.finetune.data_seed = 2;
    c.strategies = {strat(StrategyKind::vanilla), strat(StrategyKind::dps_mix, 0.3, 0.2)};
    c.seeds = {0, 1, 2};
    c.metrics = {Metric::accuracy, Metric::mcc};
    return c;
}

const ExperimentContext& tiny_context() {
    static const ExperimentContext ctx = prepare_experiment(tiny_config());
    return ctx;
}

AggregateReport run_with(const std::function<void(ExperimentConfig&)>& edit, std::size_t threads = 1) {
    ExperimentContext ctx = tiny_context();
    edit(ctx.config);
    ctx.config.validate();
    return run_experiment(ctx, threads);
}

RunRecord record(const std::string& strategy, const std::string& task, std::uint64_t seed, double mse) {
    RunRecord r;
    r.strategy = strategy;
    r.task = task;
    r.size = 10;
    r.seed = seed;
    r.in_domain["mse"] = r.ood["mse"] = mse;
    r.total_seconds = 1.0;
    return r;
}

}  // namespace

TEST(Experiment, EveryCombinationRunsExactlyOnce) {
    const auto rep = run_with([](ExperimentConfig& c) {
        c.finetune.sizes = {20, 40};
        c.strategies.push_back(strat(StrategyKind::mixout, 0.2));
    });
    EXPECT_EQ(rep.runs.size(), 3u * 2u * 3u);
    std::set<std::tuple<std::string, std::size_t, std::uint64_t>> seen;
    for (const auto& r : rep.runs) {
        EXPECT_FALSE(r.aborted) << r.error;
        EXPECT_TRUE(seen.insert({r.strategy, r.size, r.seed}).second);
    }
    EXPECT_EQ(rep.cells.size(), 3u * 2u);
    EXPECT_EQ(rep.averages.size(), 3u * 2u);
    EXPECT_EQ(rep.vanilla, "vanilla");
}

TEST(Experiment, SeedOrderDoesNotChangeStatistics) {
    const auto a = run_with([](ExperimentConfig& c) { c.seeds = {0, 1, 2}; });
    const auto b = run_with([](ExperimentConfig& c) { c.seeds = {2, 0, 1}; });
    ASSERT_EQ(a.cells.size(), b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        for (const auto& m : a.cells[i].metrics) {
            const auto* o = b.cells[i].metric(m.metric);
            ASSERT_NE(o, nullptr);
            EXPECT_NEAR(m.in_domain.mean, o->in_domain.mean, 1e-12);
            EXPECT_NEAR(m.in_domain.std, o->in_domain.std, 1e-12);
            EXPECT_NEAR(m.ood.mean, o->ood.mean, 1e-12);
        }
        EXPECT_EQ(a.cells[i].cases.easy_fraction, b.cells[i].cases.easy_fraction);
    }
}

TEST(Experiment, DuplicatedReferenceGivesIdenticalCells) {
    const auto rep = run_with([](ExperimentConfig& c) {
        c.strategies = {strat(StrategyKind::vanilla), strat(StrategyKind::vanilla)};
    });
    ASSERT_EQ(rep.strategies, (std::vector<std::string>{"vanilla", "vanilla#2"}));
    const auto* a = rep.cell("vanilla", "target", 40);
    const auto* b = rep.cell("vanilla#2", "target", 40);
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->primary().in_domain.mean, b->primary().in_domain.mean);
    EXPECT_EQ(a->primary().in_domain.std, b->primary().in_domain.std);
    EXPECT_FALSE(b->failed_run);
}

TEST(Experiment, ZeroDropStrategiesPairWithReference) {
    // With p = 0 every strategy reduces to plain fine-tuning, so identical
    // scores show that data, head init and batch order are shared.
    const auto rep = run_with([](ExperimentConfig& c) {
        c.strategies = {strat(StrategyKind::vanilla), strat(StrategyKind::mixout, 0.0),
                        strat(StrategyKind::child_tuning_d, 0.0), strat(StrategyKind::dps_dense, 0.0, 0.2)};
    });
    std::map<std::uint64_t, double> ref;
    for (const auto& r : rep.runs)
        if (r.strategy == "vanilla") ref[r.seed] = r.in_domain.at("accuracy");
    for (const auto& r : rep.runs) EXPECT_EQ(r.in_domain.at("accuracy"), ref.at(r.seed)) << r.strategy;
}

TEST(Experiment, SingleSeedIsFlagged) {
    const auto rep = run_with([](ExperimentConfig& c) { c.seeds = {4}; });
    for (const auto& c : rep.cells) {
        EXPECT_TRUE(c.single_seed);
        EXPECT_FALSE(c.primary().in_domain.std_defined);
        EXPECT_NE(format_cell(c.primary().in_domain, 100.0).find("n/a"), std::string::npos);
    }
}

TEST(Experiment, IdentityShiftMakesOodEqualInDomain) {
    const auto rep = run_with([](ExperimentConfig&) {});
    for (const auto& r : rep.runs) EXPECT_EQ(r.in_domain, r.ood);
}

TEST(Experiment, NonIdentityShiftChangesOodSet) {
    ExperimentConfig cfg = tiny_config();
    cfg.finetune.ood_shift = {2.0, 0.7};
    const auto ctx = prepare_experiment(cfg);
    EXPECT_NE(ctx.eval_sets[0].inputs, ctx.ood_sets[0].inputs);
}

TEST(Experiment, SnapshotIsDeterministicAndShared) {
    const auto again = prepare_experiment(tiny_config());
    EXPECT_EQ(again.snapshot, tiny_context().snapshot);
    again.snapshot.for_each_param([](const ParamTensor& p) { EXPECT_EQ(p.value, p.pretrained); });
    EXPECT_GT(again.pretrain_accuracy, 0.0);
}

TEST(Experiment, ThreadCountDoesNotChangeResults) {
    const auto one = run_with([](ExperimentConfig&) {}, 1);
    const auto two = run_with([](ExperimentConfig&) {}, 2);
    ASSERT_EQ(one.runs.size(), two.runs.size());
    for (std::size_t i = 0; i < one.runs.size(); ++i) {
        EXPECT_EQ(one.runs[i].in_domain, two.runs[i].in_domain);
        EXPECT_EQ(one.runs[i].correct, two.runs[i].correct);
    }
}

TEST(Experiment, DivergentRunsAreRecordedNotFatal) {
    const auto rep = run_with([](ExperimentConfig& c) {
        c.finetune.optimizer.kind = OptimizerKind::adamw;
        c.finetune.optimizer.lr = 1e308;
    });
    for (const auto& r : rep.runs) {
        EXPECT_TRUE(r.aborted);
        EXPECT_FALSE(r.error.empty());
    }
    for (const auto& c : rep.cells) {
        EXPECT_EQ(c.aborted, c.runs);
        EXPECT_EQ(format_cell(c.primary().in_domain, 100.0), "aborted");
        EXPECT_FALSE(c.has_vanilla_ref);
    }
}

TEST(Experiment, CasesComeFromPerExampleCorrectness) {
    const auto rep = run_with([](ExperimentConfig&) {});
    for (const auto& c : rep.cells) {
        ASSERT_TRUE(c.has_cases);
        std::vector<std::vector<bool>> table;
        for (const auto& r : rep.runs)
            if (r.strategy == c.strategy) table.push_back(r.correct);
        const CaseSplit expect = case_analysis(table);
        EXPECT_EQ(c.cases.easy_fraction, expect.easy_fraction);
        EXPECT_EQ(c.cases.hard_fraction, expect.hard_fraction);
    }
}

TEST(Aggregate, ErrorMetricFlagsLargerMeanAsFailed) {
    ExperimentConfig cfg = tiny_config();
    cfg.finetune.tasks[0].name = "reg";
    cfg.finetune.tasks[0].head = Head::regression();
    cfg.finetune.sizes = {10};
    cfg.metrics = {Metric::mse};
    AggregateReport rep;
    rep.strategies = {"vanilla", "worse", "better"};
    rep.tasks = {"reg"};
    rep.sizes = {10};
    rep.vanilla = "vanilla";
    for (std::uint64_t s : {0u, 1u}) {
        rep.runs.push_back(record("vanilla", "reg", s, 1.0 + 0.1 * static_cast<double>(s)));
        rep.runs.push_back(record("worse", "reg", s, 2.0));
        rep.runs.push_back(record("better", "reg", s, 0.5));
    }
    aggregate(rep, cfg);
    EXPECT_FALSE(rep.cell("vanilla", "reg", 10)->failed_run);
    EXPECT_TRUE(rep.cell("worse", "reg", 10)->failed_run);
    EXPECT_FALSE(rep.cell("better", "reg", 10)->failed_run);
    EXPECT_FALSE(rep.cell("better", "reg", 10)->has_cases);
    EXPECT_DOUBLE_EQ(rep.cell("worse", "reg", 10)->time_ratio, 1.0);
    for (const auto& a : rep.averages) EXPECT_EQ(a.failed_run, a.strategy == "worse") << a.strategy;
    EXPECT_DOUBLE_EQ(rep.averages[0].mean_score, -1.05);
}

TEST(Aggregate, ApplicableMetricsFollowHead) {
    const std::vector<Metric> all{Metric::accuracy, Metric::mcc, Metric::mse};
    EXPECT_EQ(applicable_metrics(all, Head::classification(2)), (std::vector<Metric>{Metric::accuracy, Metric::mcc}));
    EXPECT_EQ(applicable_metrics(all, Head::classification(3)), (std::vector<Metric>{Metric::accuracy}));
    EXPECT_EQ(applicable_metrics(all, Head::regression()), (std::vector<Metric>{Metric::mse}));
    EXPECT_EQ(applicable_metrics({Metric::mcc}, Head::regression()), (std::vector<Metric>{Metric::mse}));
}

TEST(Validation, RejectsInconsistentConfigs) {
    auto expect_error = [](const std::function<void(ExperimentConfig&)>& edit) {
        ExperimentConfig c = tiny_config();
        edit(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    expect_error([](ExperimentConfig& c) { c.seeds.clear(); });
    expect_error([](ExperimentConfig& c) { c.strategies.clear(); });
    expect_error([](ExperimentConfig& c) { c.finetune.sizes = {500}; });
    expect_error([](ExperimentConfig& c) { c.finetune.tasks[0].input_dim = 5; });
    expect_error([](ExperimentConfig& c) { c.finetune.tasks.push_back(c.finetune.tasks[0]); });
    expect_error([](ExperimentConfig& c) {
        c.finetune.tasks[0].generator = GeneratorKind::gaussian_mixture;
        c.finetune.ood_shift = {1.0, 0.0};
    });
    expect_error([](ExperimentConfig& c) { c.strategies.push_back(strat(StrategyKind::dps_mix, 0.3, 0.9)); });
}

// --- configuration files ----------------------------------------------------

TEST(ConfigIo, RoundTripThroughJson) {
    const ExperimentConfig c = tiny_config();
    const auto j = config_to_json(c);
    EXPECT_EQ(config_to_json(config_from_json(j)), j);
}

TEST(ConfigIo, ShippedConfigsLoadAndRoundTrip) {
    std::size_t n = 0;
    for (const auto& entry : std::filesystem::directory_iterator(SUBNET_TUNE_CONFIG_DIR)) {
        if (entry.path().extension() != ".json") continue;
        const ExperimentConfig c = load_config(entry.path().string());
        EXPECT_EQ(config_to_json(config_from_json(config_to_json(c))), config_to_json(c)) << entry.path();
        ++n;
    }
    EXPECT_GE(n, 3u);
}

TEST(ConfigIo, DefaultsAndShorthands) {
    const nlohmann::json j = {
        {"pretrain", {{"task", {{"name", "s"}, {"head", "classification"}, {"classes", 3}}}}},
        {"finetune", {{"tasks", {{{"name", "t"}}}}}},
        {"strategies", {"vanilla", {{"kind", "dps_dense"}, {"p", 0.5}, {"ur", 0.2}}}},
    };
    const ExperimentConfig c = config_from_json(j);
    EXPECT_EQ(c.seeds.size(), 10u);
    EXPECT_EQ(c.seeds.back(), 9u);
    EXPECT_EQ(c.strategies[0].kind, StrategyKind::vanilla);
    EXPECT_EQ(c.strategies[1].ur, 0.2);
    EXPECT_EQ(c.pretrain.task.head.num_classes, 3u);

    nlohmann::json k = j;
    k["seeds"] = {{"count", 3}, {"start", 7}};
    EXPECT_EQ(config_from_json(k).seeds, (std::vector<std::uint64_t>{7, 8, 9}));
}

TEST(ConfigIo, UnknownKeysAndBadTypesAreErrors) {
    const nlohmann::json base = config_to_json(tiny_config());
    auto message = [](const nlohmann::json& j) -> std::string {
        try {
            config_from_json(j);
        } catch (const ConfigError& e) {
            return e.what();
        }
        return "";
    };
    nlohmann::json j = base;
    j["epochs"] = 3;
    EXPECT_NE(message(j).find("config.epochs"), std::string::npos);
    j = base;
    j["finetune"]["tasks"][0]["hiden"] = 3;
    EXPECT_NE(message(j).find("config.finetune.tasks[0].hiden"), std::string::npos);
    j = base;
    j["finetune"]["pool"] = -1;
    EXPECT_NE(message(j).find("non-negative integer"), std::string::npos);
    j = base;
    j["finetune"]["pool"] = "many";
    EXPECT_FALSE(message(j).empty());
    j = base;
    j["strategies"][1]["kind"] = "dropout";
    EXPECT_NE(message(j).find("config.strategies[1].kind"), std::string::npos);
    j = base;
    j["seeds"] = {1, 1};
    EXPECT_NE(message(j).find("duplicate seed"), std::string::npos);
    j = base;
    j["metrics"] = {"f1"};
    EXPECT_FALSE(message(j).empty());
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

// --- reports ----------------------------------------------------------------

TEST(Reports, JsonRoundTrip) {
    const auto rep = run_with([](ExperimentConfig&) {});
    const auto j = report_to_json(rep);
    EXPECT_EQ(report_to_json(report_from_json(j)), j);
    EXPECT_THROW(report_from_json(nlohmann::json{{"name", 3}}), ConfigError);
}

TEST(Reports, WrittenTablesHaveExpectedShape) {
    const auto rep = run_with([](ExperimentConfig& c) { c.finetune.sizes = {20, 40}; });
    const auto dir = std::filesystem::temp_directory_path() / "subnet_tune_report_test";
    std::filesystem::remove_all(dir);
    write_report(rep, dir);
    for (const char* f : {"report.json", "tables/accuracy_in_domain.csv", "tables/accuracy_ood.csv",
                          "tables/mcc_in_domain.csv", "tables/failed_runs.csv", "tables/cases.csv",
                          "tables/timing.csv"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    std::ifstream in(dir / "tables/accuracy_in_domain.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "strategy,size,target");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    EXPECT_EQ(rows, 2u * 2u);
    EXPECT_EQ(load_report(dir.string()).runs.size(), rep.runs.size());

    std::ostringstream timing;
    write_timing_table(rep, timing);
    EXPECT_NE(timing.str().find("vanilla,20,target,"), std::string::npos);
    EXPECT_NE(timing.str().find(",x1.00\n"), std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST(Reports, CellFormatting) {
    SummaryStats s;
    s.n = 3;
    s.mean = 0.78876;
    s.std = 0.01234;
    s.std_defined = true;
    EXPECT_EQ(format_cell(s, 100.0), "78.88 1.23");
    EXPECT_EQ(format_ratio(1.0), "x1.00");
    EXPECT_EQ(format_ratio(0.0), "n/a");
    EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_escape("dps_mix(p=0.3,ur=0.1)"), "\"dps_mix(p=0.3,ur=0.1)\"");
    EXPECT_EQ(display_scale("mse"), 1.0);
}

TEST(Reports, CompareRequiresMatchingTasks) {
    const auto a = run_with([](ExperimentConfig&) {});
    AggregateReport b = a;
    b.name = "other";
    const auto rows = compare_reports({a, b});
    EXPECT_EQ(rows.size(), 2 * a.cells.size());
    for (const auto& r : rows) EXPECT_EQ(r.delta_mean, 0.0);

    AggregateReport c = a;
    c.name = "renamed";
    c.tasks = {"elsewhere"};
    try {
        compare_reports({a, c});
        FAIL() << "expected a task mismatch";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("'target' missing from renamed"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("'elsewhere' missing from tiny"), std::string::npos);
    }
    EXPECT_THROW(compare_reports({a}), ConfigError);
}
