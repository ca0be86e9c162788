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

#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "subnet_tune/model.hpp"
#include "subnet_tune/optimizer.hpp"
#include "subnet_tune/strategy.hpp"

namespace subnet_tune {

struct StepRecord {
    std::size_t t = 0;
    Stage stage = Stage::none;
    double loss = 0.0;
    double grad_norm = 0.0;
    bool refresh = false;
};

/// Wall-clock seconds per phase. Mask construction, accumulation, weight
/// mixing and the CHILD-TUNING_D pre-pass all count as strategy overhead.
struct PhaseTimes {
    double forward = 0.0;
    double backward = 0.0;
    double strategy_overhead = 0.0;
    double optimizer = 0.0;

    [[nodiscard]] double sum() const noexcept { return forward + backward + strategy_overhead + optimizer; }
};

struct TrainLog {
    std::string strategy;
    std::vector<StepRecord> steps;
    PhaseTimes phases;
    double total_seconds = 0.0;
};

/// Optional per-step callbacks, mostly for tests that replay trajectories.
struct StepObserver {
    std::function<void(std::size_t t, const MlpModel& model, const Batch& batch)> before_step;
    std::function<void(const StepRecord& rec, const MlpModel& model, const UpdateStrategy& strategy)> after_step;
};

struct TrainOptions {
    OptimizerConfig optimizer;  // optimizer.total_steps is the run length
    std::size_t batch_size = 32;
    StepObserver observer;
};

struct TrainResult {
    MlpModel model;
    TrainLog log;
};

/// Splits `data` into consecutive batches, keeping the last partial one.
/// With a shuffle rng the row order is permuted first.
inline std::vector<Batch> make_batches(const Dataset& data, std::size_t batch_size, Rng* shuffle = nullptr) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (data.size() == 0) throw ConfigError("empty training set");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (shuffle) std::shuffle(idx.begin(), idx.end(), shuffle->engine());
    std::vector<Batch> out;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t end = std::min(idx.size(), start + batch_size);
        out.push_back(take_rows(data, std::span<const std::size_t>(idx).subspan(start, end - start)));
    }
    return out;
}

namespace detail {

class PhaseClock {
public:
    using clock = std::chrono::steady_clock;
    void start() { t0_ = clock::now(); }
    void stop_into(double& acc) {
        acc += std::chrono::duration<double>(clock::now() - t0_).count();
    }

private:
    clock::time_point t0_;
};

}  // namespace detail

/// Runs optimizer.total_steps updates, reshuffling the data once per epoch.
/// The strategy decides which weights feed forward and which entries move.
inline TrainResult train(MlpModel model, const Dataset& data, UpdateStrategy& strategy, const TrainOptions& opts,
                         const Rng& run_rng) {
    opts.optimizer.validate();
    const std::size_t ms = opts.optimizer.total_steps;
    Rng shuffle_rng = run_rng.derive("shuffle");
    Rng strategy_rng = run_rng.derive("strategy");

    TrainLog log;
    log.strategy = strategy.config().display_name();
    log.steps.reserve(ms);
    detail::PhaseClock clock;
    const auto wall0 = detail::PhaseClock::clock::now();

    clock.start();
    const std::vector<Batch> ordered = make_batches(data, opts.batch_size);
    strategy.prepare(model, ordered, ms);
    clock.stop_into(log.phases.strategy_overhead);

    OptimizerState opt_state;
    std::vector<ParamTensor*> params = model.params();
    std::vector<Batch> epoch;
    std::size_t cursor = 0;

    for (std::size_t t = 1; t <= ms; ++t) {
        clock.start();
        const StepInfo info = strategy.begin_step(t, model);
        clock.stop_into(log.phases.strategy_overhead);

        clock.start();
        if (cursor == epoch.size()) {
            epoch = make_batches(data, opts.batch_size, &shuffle_rng);
            cursor = 0;
        }
        const Batch& batch = epoch[cursor++];
        clock.stop_into(log.phases.forward);

        if (opts.observer.before_step) opts.observer.before_step(t, model, batch);

        clock.start();
        strategy.pre_forward(model, strategy_rng);
        clock.stop_into(log.phases.strategy_overhead);

        clock.start();
        const ForwardCache cache = forward_pass(model, batch.inputs);
        clock.stop_into(log.phases.forward);

        clock.start();
        double loss = 0.0;
        try {
            loss = backward(model, cache, batch.targets);
        } catch (const NonFiniteError& e) {
            throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(t));
        }
        clock.stop_into(log.phases.backward);

        clock.start();
        strategy.post_backward(model);
        clock.stop_into(log.phases.strategy_overhead);

        clock.start();
        const StepStats stats = optimizer_step(params, strategy.update_mask(), opts.optimizer, opt_state, t);
        clock.stop_into(log.phases.optimizer);

        clock.start();
        strategy.post_step(model);
        clock.stop_into(log.phases.strategy_overhead);

        log.steps.push_back({t, info.stage, loss, stats.grad_norm, info.refresh});
        if (opts.observer.after_step) opts.observer.after_step(log.steps.back(), model, strategy);
    }
    log.total_seconds = std::chrono::duration<double>(detail::PhaseClock::clock::now() - wall0).count();
    return {std::move(model), std::move(log)};
}

inline TrainResult train(MlpModel model, const Dataset& data, const StrategyConfig& cfg, const TrainOptions& opts,
                         const Rng& run_rng) {
    auto strategy = make_strategy(cfg);
    return train(std::move(model), data, *strategy, opts, run_rng);
}

// Export

inline void write_steps_csv(const TrainLog& log, std::ostream& out) {
    out << "step,stage,loss,grad_norm,mask_refresh\n";
    out.precision(17);
    for (const auto& s : log.steps)
        out << s.t << ',' << to_string(s.stage) << ',' << s.loss << ',' << s.grad_norm << ',' << (s.refresh ? 1 : 0)
            << '\n';
}

inline nlohmann::json log_summary_json(const TrainLog& log) {
    return {{"strategy", log.strategy},
            {"steps", log.steps.size()},
            {"final_loss", log.steps.empty() ? 0.0 : log.steps.back().loss},
            {"refreshes", std::count_if(log.steps.begin(), log.steps.end(), [](const auto& s) { return s.refresh; })},
            {"total_seconds", log.total_seconds},
            {"phases",
             {{"forward", log.phases.forward},
              {"backward", log.phases.backward},
              {"strategy_overhead", log.phases.strategy_overhead},
              {"optimizer", log.phases.optimizer}}}};
}

}  // namespace subnet_tune
