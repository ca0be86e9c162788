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

// Pretrain -> fine-tune benchmark protocol.
//
// One model is pretrained on the source task and snapshotted; that snapshot
// is the shared anchor W(0) for every fine-tuning run. For each
// (task, size, seed) the subsample, the fresh task head and the batch order
// are derived from the seed alone, so every strategy sees the same data in
// the same order (paired comparison). Each run is evaluated in-domain and on
// a covariate-shifted copy of the task.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "subnet_tune/metrics.hpp"
#include "subnet_tune/model.hpp"
#include "subnet_tune/strategy.hpp"
#include "subnet_tune/tasks.hpp"
#include "subnet_tune/trainer.hpp"

namespace subnet_tune {

struct ModelSpec {
    std::vector<std::size_t> hidden{32, 32};
    Activation activation = Activation::tanh;
};

struct PretrainSpec {
    TaskSpec task;
    std::size_t samples = 20000;
    std::size_t epochs = 3;
    std::size_t batch_size = 64;
    OptimizerConfig optimizer;  // total_steps derived from epochs
    std::uint64_t seed = 0;
};

struct FinetuneSpec {
    std::vector<TaskSpec> tasks;
    std::vector<std::size_t> sizes{500, 1000};
    std::size_t pool = 4000;          // generated training pool per task
    std::size_t eval_samples = 1000;  // in-domain and OOD evaluation sets
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    OptimizerConfig optimizer;  // total_steps derived per run
    CovariateShift ood_shift{1.0, 0.5};
    std::uint64_t data_seed = 0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    ModelSpec model;
    PretrainSpec pretrain;
    FinetuneSpec finetune;
    std::vector<StrategyConfig> strategies;
    std::vector<std::uint64_t> seeds;
    std::vector<Metric> metrics{Metric::accuracy, Metric::mcc, Metric::mse};

    void validate() const {
        if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
        if (strategies.empty()) throw ConfigError("experiment needs at least one strategy");
        if (finetune.tasks.empty()) throw ConfigError("experiment needs at least one fine-tuning task");
        if (finetune.sizes.empty()) throw ConfigError("experiment needs at least one subsample size");
        if (metrics.empty()) throw ConfigError("experiment needs at least one metric");
        for (const auto& s : strategies) s.validate();
        pretrain.task.validate();
        for (const auto& t : finetune.tasks) {
            t.validate();
            if (t.generator == GeneratorKind::gaussian_mixture && !finetune.ood_shift.is_identity())
                throw ConfigError("task '" + t.name + "': OOD evaluation shifts inputs, which needs a teacher generator");
            if (t.input_dim != pretrain.task.input_dim)
                throw ConfigError("task '" + t.name + "' input_dim differs from the pretraining task");
        }
        for (auto n : finetune.sizes) {
            if (n == 0) throw ConfigError("subsample size must be positive");
            if (n > finetune.pool)
                throw ConfigError("subsample size " + std::to_string(n) + " exceeds the generated pool of " +
                                  std::to_string(finetune.pool));
        }
        if (finetune.eval_samples == 0 || pretrain.samples == 0) throw ConfigError("sample counts must be positive");
        if (finetune.epochs == 0 || pretrain.epochs == 0) throw ConfigError("epochs must be positive");
        std::map<std::string, int> names;
        for (const auto& t : finetune.tasks)
            if (++names[t.name] > 1) throw ConfigError("duplicate task name '" + t.name + "'");
    }
};

// ---------------------------------------------------------------------------
// Report types

struct RunRecord {
    std::string strategy;
    std::string task;
    std::size_t size = 0;
    std::uint64_t seed = 0;
    bool aborted = false;
    std::string error;
    std::map<std::string, double> in_domain;
    std::map<std::string, double> ood;
    std::vector<bool> correct;  // per in-domain eval example; classification only
    double total_seconds = 0.0;
    PhaseTimes phases;
    double final_loss = 0.0;
};

struct MetricSummary {
    std::string metric;
    SummaryStats in_domain;
    SummaryStats ood;
};

struct CellReport {
    std::string strategy;
    std::string task;
    std::size_t size = 0;
    std::string primary_metric;
    bool higher_is_better = true;
    std::vector<MetricSummary> metrics;
    std::size_t runs = 0;
    std::size_t aborted = 0;
    bool single_seed = false;  // std undefined
    bool has_vanilla_ref = false;
    bool failed_run = false;
    bool has_cases = false;
    CaseSplit cases;
    double mean_seconds = 0.0;
    double mean_overhead_seconds = 0.0;
    double time_ratio = 0.0;  // vs vanilla; 0 when no reference

    [[nodiscard]] const MetricSummary* metric(const std::string& name) const {
        for (const auto& m : metrics)
            if (m.metric == name) return &m;
        return nullptr;
    }
    [[nodiscard]] const MetricSummary& primary() const { return *metric(primary_metric); }
};

/// Cross-task average per (strategy, size); scores oriented so that higher
/// is better (error metrics negated).
struct AverageReport {
    std::string strategy;
    std::size_t size = 0;
    double mean_score = 0.0;
    bool has_vanilla_ref = false;
    bool failed_run = false;
};

struct AggregateReport {
    std::string name;
    std::vector<std::string> strategies;
    std::vector<std::string> tasks;
    std::vector<std::size_t> sizes;
    std::vector<std::uint64_t> seeds;
    std::string vanilla;  // label of the reference strategy, empty if none
    std::vector<RunRecord> runs;
    std::vector<CellReport> cells;
    std::vector<AverageReport> averages;

    [[nodiscard]] const CellReport* cell(const std::string& strategy, const std::string& task, std::size_t size) const {
        for (const auto& c : cells)
            if (c.strategy == strategy && c.task == task && c.size == size) return &c;
        return nullptr;
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SummaryStats, n, mean, std, min, max, std_defined)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CaseSplit, easy_fraction, hard_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PhaseTimes, forward, backward, strategy_overhead, optimizer)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunRecord, strategy, task, size, seed, aborted, error, in_domain, ood, correct,
                                   total_seconds, phases, final_loss)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetricSummary, metric, in_domain, ood)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CellReport, strategy, task, size, primary_metric, higher_is_better, metrics, runs,
                                   aborted, single_seed, has_vanilla_ref, failed_run, has_cases, cases, mean_seconds,
                                   mean_overhead_seconds, time_ratio)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AverageReport, strategy, size, mean_score, has_vanilla_ref, failed_run)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AggregateReport, name, strategies, tasks, sizes, seeds, vanilla, runs, cells,
                                   averages)

// ---------------------------------------------------------------------------
// Protocol steps

/// Metrics of `cfg` that make sense for the task's head, in config order.
inline std::vector<Metric> applicable_metrics(const std::vector<Metric>& wanted, const Head& head) {
    std::vector<Metric> out;
    for (Metric m : wanted) {
        const bool ok = head.kind == HeadKind::regression
                            ? m == Metric::mse
                            : m == Metric::accuracy || (m == Metric::mcc && head.num_classes == 2);
        if (ok) out.push_back(m);
    }
    if (out.empty()) out.push_back(head.kind == HeadKind::regression ? Metric::mse : Metric::accuracy);
    return out;
}

/// Supervised training on the source task, then snapshot: the returned
/// model's pretrained values equal its trained values.
inline MlpModel pretrain_then_snapshot(const ModelSpec& spec, const TaskSpec& task, const Dataset& data,
                                       const PretrainSpec& opts) {
    const Rng root(opts.seed);
    Rng init = root.derive("pretrain-init");
    MlpModel model = MlpModel::create(task.input_dim, spec.hidden, spec.activation, task.head, init);
    TrainOptions topt;
    topt.batch_size = opts.batch_size;
    topt.optimizer = opts.optimizer;
    topt.optimizer.total_steps = opts.epochs * ((data.size() + opts.batch_size - 1) / opts.batch_size);
    VanillaStrategy vanilla;
    TrainResult r = train(std::move(model), data, vanilla, topt, root.derive("pretrain-train"));
    return clone_as_pretrained(r.model);
}

inline std::vector<double> oriented_scores(const std::vector<double>& xs, bool higher_better) {
    std::vector<double> out = xs;
    if (!higher_better)
        for (double& x : out) x = -x;
    return out;
}

/// Everything shared by the runs of one experiment.
struct ExperimentContext {
    ExperimentConfig config;
    MlpModel snapshot;
    double pretrain_accuracy = 0.0;  // held-out source-task score
    std::vector<Dataset> pools;
    std::vector<Dataset> eval_sets;
    std::vector<Dataset> ood_sets;
};

inline ExperimentContext prepare_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentContext ctx;
    ctx.config = cfg;
    const Rng data_root(cfg.finetune.data_seed);

    Rng pre_rng = Rng(cfg.pretrain.seed).derive("pretrain-data");
    const Dataset pre = generate_task(cfg.pretrain.task, cfg.pretrain.samples, pre_rng);
    ctx.snapshot = pretrain_then_snapshot(cfg.model, cfg.pretrain.task, pre, cfg.pretrain);
    Rng held_rng = Rng(cfg.pretrain.seed).derive("pretrain-heldout");
    const Dataset held = generate_task(cfg.pretrain.task, 2000, held_rng);
    const auto held_preds = predict(ctx.snapshot, held.inputs);
    ctx.pretrain_accuracy = cfg.pretrain.task.head.kind == HeadKind::regression
                                ? -metric_mse(held_preds, held.targets)
                                : metric_accuracy(held_preds, held.targets);

    for (std::size_t i = 0; i < cfg.finetune.tasks.size(); ++i) {
        const TaskSpec& t = cfg.finetune.tasks[i];
        Rng pool_rng = data_root.derive("pool/" + t.name);
        ctx.pools.push_back(generate_task(t, cfg.finetune.pool, pool_rng));
        // In-domain and OOD sets share one input stream, so an identity shift
        // reproduces the in-domain set exactly.
        Rng eval_rng = data_root.derive("eval/" + t.name);
        Rng ood_rng = eval_rng;
        ctx.eval_sets.push_back(generate_task(t, cfg.finetune.eval_samples, eval_rng));
        ctx.ood_sets.push_back(generate_task(t.shifted(cfg.finetune.ood_shift), cfg.finetune.eval_samples, ood_rng));
    }
    return ctx;
}

/// Keys shared by all strategies of one (task, size, seed) cell.
inline Rng paired_rng(std::uint64_t seed, const std::string& task, std::size_t size) {
    return Rng(seed).derive(task + "/" + std::to_string(size));
}

inline Dataset subsample(const Dataset& pool, std::size_t n, Rng rng) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(n);
    return take_rows(pool, idx);
}

/// Fine-tunes one strategy on one (task, size, seed) and evaluates it.
/// Training failures are captured in the record.
inline RunRecord run_single(const ExperimentContext& ctx, std::size_t strategy_idx, std::size_t task_idx,
                            std::size_t size, std::uint64_t seed, const std::string& label) {
    const auto& cfg = ctx.config;
    const TaskSpec& task = cfg.finetune.tasks[task_idx];
    RunRecord rec;
    rec.strategy = label;
    rec.task = task.name;
    rec.size = size;
    rec.seed = seed;

    const Rng cell = paired_rng(seed, task.name, size);
    const Dataset train_set = subsample(ctx.pools[task_idx], size, cell.derive("subsample"));
    MlpModel model = ctx.snapshot;
    Rng head_rng = cell.derive("head");
    reinit_head(model, task.head, head_rng);

    TrainOptions topt;
    topt.batch_size = cfg.finetune.batch_size;
    topt.optimizer = cfg.finetune.optimizer;
    topt.optimizer.total_steps = cfg.finetune.epochs * ((size + topt.batch_size - 1) / topt.batch_size);
    try {
        auto strategy = make_strategy(cfg.strategies[strategy_idx]);
        TrainResult r = train(std::move(model), train_set, *strategy, topt, cell.derive("train"));
        rec.total_seconds = r.log.total_seconds;
        rec.phases = r.log.phases;
        rec.final_loss = r.log.steps.back().loss;
        const auto metrics = applicable_metrics(cfg.metrics, task.head);
        const auto& eval = ctx.eval_sets[task_idx];
        const auto& ood = ctx.ood_sets[task_idx];
        const auto preds = predict(r.model, eval.inputs);
        const auto ood_preds = predict(r.model, ood.inputs);
        for (Metric m : metrics) {
            rec.in_domain[to_string(m)] = compute_metric(m, preds, eval.targets);
            rec.ood[to_string(m)] = compute_metric(m, ood_preds, ood.targets);
        }
        if (task.head.kind == HeadKind::classification) {
            rec.correct.resize(preds.size());
            for (std::size_t i = 0; i < preds.size(); ++i) rec.correct[i] = preds[i] == eval.targets[i];
        }
    } catch (const std::exception& e) {
        rec.aborted = true;
        rec.error = e.what();
    }
    return rec;
}

/// Unique display labels, suffixing repeats with "#2", "#3", ...
inline std::vector<std::string> strategy_labels(const std::vector<StrategyConfig>& strategies) {
    std::vector<std::string> out;
    std::map<std::string, int> seen;
    for (const auto& s : strategies) {
        std::string l = s.display_name();
        const int k = ++seen[l];
        if (k > 1) l += "#" + std::to_string(k);
        out.push_back(l);
    }
    return out;
}

/// Builds cells and averages from run records. Records are ordered by seed
/// before reduction, so the seed list order cannot change any statistic.
inline void aggregate(AggregateReport& rep, const ExperimentConfig& cfg) {
    rep.cells.clear();
    rep.averages.clear();
    std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<const RunRecord*>> groups;
    for (const auto& r : rep.runs) groups[{r.strategy, r.task, r.size}].push_back(&r);
    for (auto& [_, v] : groups)
        std::sort(v.begin(), v.end(), [](const RunRecord* a, const RunRecord* b) { return a->seed < b->seed; });

    for (std::size_t ti = 0; ti < cfg.finetune.tasks.size(); ++ti) {
        const TaskSpec& task = cfg.finetune.tasks[ti];
        const auto metrics = applicable_metrics(cfg.metrics, task.head);
        for (std::size_t size : cfg.finetune.sizes) {
            for (const auto& label : rep.strategies) {
                const auto& recs = groups[{label, task.name, size}];
                CellReport c;
                c.strategy = label;
                c.task = task.name;
                c.size = size;
                c.primary_metric = to_string(metrics.front());
                c.higher_is_better = higher_is_better(metrics.front());
                c.runs = recs.size();
                std::vector<const RunRecord*> ok;
                for (const auto* r : recs) {
                    if (r->aborted) ++c.aborted;
                    else ok.push_back(r);
                }
                for (Metric m : metrics) {
                    std::vector<double> in, out;
                    for (const auto* r : ok) {
                        in.push_back(r->in_domain.at(to_string(m)));
                        out.push_back(r->ood.at(to_string(m)));
                    }
                    c.metrics.push_back({to_string(m), summarize(in), summarize(out)});
                }
                c.single_seed = ok.size() < 2;
                if (!ok.empty()) {
                    double secs = 0.0, over = 0.0;
                    for (const auto* r : ok) {
                        secs += r->total_seconds;
                        over += r->phases.strategy_overhead;
                    }
                    c.mean_seconds = secs / static_cast<double>(ok.size());
                    c.mean_overhead_seconds = over / static_cast<double>(ok.size());
                    if (!ok.front()->correct.empty()) {
                        std::vector<std::vector<bool>> table;
                        for (const auto* r : ok) table.push_back(r->correct);
                        c.cases = case_analysis(table);
                        c.has_cases = true;
                    }
                }
                rep.cells.push_back(std::move(c));
            }
        }
    }

    if (!rep.vanilla.empty()) {
        for (auto& c : rep.cells) {
            const CellReport* v = rep.cell(rep.vanilla, c.task, c.size);
            if (!v || v->primary().in_domain.n == 0 || c.primary().in_domain.n == 0) continue;
            c.has_vanilla_ref = true;
            c.failed_run =
                failed_run_flag(c.primary().in_domain.mean, v->primary().in_domain.mean, c.higher_is_better);
            if (v->mean_seconds > 0.0) c.time_ratio = c.mean_seconds / v->mean_seconds;
        }
    }

    for (std::size_t size : cfg.finetune.sizes) {
        auto avg_of = [&](const std::string& label, bool& complete) {
            double s = 0.0;
            std::size_t n = 0;
            complete = true;
            for (const auto& task : cfg.finetune.tasks) {
                const CellReport* c = rep.cell(label, task.name, size);
                if (!c || c->primary().in_domain.n == 0) {
                    complete = false;
                    continue;
                }
                s += c->higher_is_better ? c->primary().in_domain.mean : -c->primary().in_domain.mean;
                ++n;
            }
            return n ? s / static_cast<double>(n) : 0.0;
        };
        bool vcomplete = false;
        const double vavg = rep.vanilla.empty() ? 0.0 : avg_of(rep.vanilla, vcomplete);
        for (const auto& label : rep.strategies) {
            AverageReport a;
            a.strategy = label;
            a.size = size;
            bool complete = false;
            a.mean_score = avg_of(label, complete);
            a.has_vanilla_ref = !rep.vanilla.empty() && vcomplete && complete;
            a.failed_run = a.has_vanilla_ref && failed_run_flag(a.mean_score, vavg);
            rep.averages.push_back(a);
        }
    }
}

struct RunProgress {
    std::size_t done = 0;
    std::size_t total = 0;
    const RunRecord* last = nullptr;
};

/// Every (strategy, task, size, seed) run, then aggregation. Runs are
/// independent and spread over `threads` workers; aborted runs are recorded,
/// never fatal.
inline AggregateReport run_experiment(const ExperimentContext& ctx, std::size_t threads = 1,
                                      const std::function<void(const RunProgress&)>& progress = {}) {
    const auto& cfg = ctx.config;
    AggregateReport rep;
    rep.name = cfg.name;
    rep.strategies = strategy_labels(cfg.strategies);
    for (const auto& t : cfg.finetune.tasks) rep.tasks.push_back(t.name);
    rep.sizes = cfg.finetune.sizes;
    rep.seeds = cfg.seeds;
    for (std::size_t i = 0; i < cfg.strategies.size(); ++i) {
        if (cfg.strategies[i].kind == StrategyKind::vanilla) {
            rep.vanilla = rep.strategies[i];
            break;
        }
    }

    struct Job {
        std::size_t strategy, task, size;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t ti = 0; ti < cfg.finetune.tasks.size(); ++ti)
        for (std::size_t size : cfg.finetune.sizes)
            for (std::uint64_t seed : cfg.seeds)
                for (std::size_t si = 0; si < cfg.strategies.size(); ++si) jobs.push_back({si, ti, size, seed});

    rep.runs.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mu;
    std::size_t done = 0;
    auto worker = [&] {
        for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
            const Job& job = jobs[j];
            rep.runs[j] = run_single(ctx, job.strategy, job.task, job.size, job.seed, rep.strategies[job.strategy]);
            if (progress) {
                std::lock_guard lock(progress_mu);
                progress({++done, jobs.size(), &rep.runs[j]});
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(threads, jobs.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    aggregate(rep, cfg);
    return rep;
}

inline AggregateReport run_experiment(const ExperimentConfig& cfg, std::size_t threads = 1) {
    return run_experiment(prepare_experiment(cfg), threads);
}

}  // namespace subnet_tune
