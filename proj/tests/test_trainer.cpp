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

#include <cmath>
#include <set>
#include <sstream>

#include "subnet_tune/metrics.hpp"
#include "subnet_tune/trainer.hpp"

using namespace subnet_tune;

namespace {

OptimizerConfig sched(double lr, std::size_t ms, double warmup, LrSchedule s = LrSchedule::linear) {
    OptimizerConfig c;
    c.lr = lr;
    c.total_steps = ms;
    c.warmup_fraction = warmup;
    c.schedule = s;
    return c;
}

Dataset separable(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d{gaussian_init({n, 3}, 0.0, 1.0, rng), std::vector<double>(n)};
    for (std::size_t r = 0; r < n; ++r) d.targets[r] = d.inputs(r, 0) - d.inputs(r, 2) > 0.0 ? 1.0 : 0.0;
    return d;
}

MlpModel small_model(std::uint64_t seed, std::size_t width = 8) {
    Rng rng(seed);
    return clone_as_pretrained(MlpModel::create(3, {width}, Activation::tanh, Head::classification(2), rng));
}

TrainOptions adamw(std::size_t steps, double lr = 0.01) {
    TrainOptions o;
    o.optimizer.kind = OptimizerKind::adamw;
    o.optimizer.lr = lr;
    o.optimizer.total_steps = steps;
    o.optimizer.warmup_fraction = 0.1;
    o.batch_size = 16;
    return o;
}

}  // namespace

TEST(LearningRate, WarmupThenLinearDecay) {
    const auto c = sched(1.0, 10, 0.2);
    EXPECT_EQ(c.warmup_steps(), 2u);
    EXPECT_DOUBLE_EQ(lr_at(c, 1), 0.5);
    EXPECT_DOUBLE_EQ(lr_at(c, 2), 1.0);
    EXPECT_DOUBLE_EQ(lr_at(c, 6), 0.5);
    EXPECT_DOUBLE_EQ(lr_at(c, 10), 0.0);
    EXPECT_THROW(lr_at(c, 0), ScheduleError);
    EXPECT_THROW(lr_at(c, 11), ScheduleError);
}

TEST(LearningRate, ConstantAfterWarmup) {
    const auto c = sched(0.3, 10, 0.2, LrSchedule::constant);
    EXPECT_DOUBLE_EQ(lr_at(c, 1), 0.15);
    for (std::size_t t = 2; t <= 10; ++t) EXPECT_DOUBLE_EQ(lr_at(c, t), 0.3);
    EXPECT_DOUBLE_EQ(lr_at(sched(0.3, 5, 0.0), 1), 0.3 * 4.0 / 5.0);
}

TEST(Optimizer, ConfigValidation) {
    auto c = sched(0.1, 10, 0.0);
    EXPECT_NO_THROW(c.validate());
    c.lr = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = sched(0.1, 10, 1.0);
    EXPECT_THROW(c.validate(), ConfigError);
    c = sched(0.1, 0, 0.0);
    EXPECT_THROW(c.validate(), ConfigError);
    c = sched(0.1, 10, 0.0);
    c.clip_norm = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Optimizer, SgdScalarStep) {
    ParamTensor w("w", Matrix{{2.0}}, true);
    w.grad[0] = 4.0;
    std::vector<ParamTensor*> ps{&w};
    OptimizerState st;
    optimizer_step(ps, nullptr, sched(0.1, 1, 0.0, LrSchedule::constant), st, 1);
    EXPECT_DOUBLE_EQ(w.value[0], 1.6);
}

TEST(Optimizer, AdamWFirstStepByHand) {
    ParamTensor w("w", Matrix{{1.0, -2.0}}, true);
    w.grad[0] = 0.5;
    w.grad[1] = -3.0;
    std::vector<ParamTensor*> ps{&w};
    auto c = sched(0.1, 4, 0.0, LrSchedule::constant);
    c.kind = OptimizerKind::adamw;
    c.weight_decay = 0.01;
    OptimizerState st;
    optimizer_step(ps, nullptr, c, st, 1);
    // After one step m_hat = g and v_hat = g^2, so the Adam direction is g / (|g| + eps).
    EXPECT_NEAR(w.value[0], 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0), 1e-14);
    EXPECT_NEAR(w.value[1], -2.0 - 0.1 * (-3.0 / (3.0 + 1e-8) + 0.01 * -2.0), 1e-14);
    EXPECT_NEAR(st.m.at("w")[0], 0.05, 1e-15);
    EXPECT_NEAR(st.v.at("w")[1], 0.001 * 9.0, 1e-15);
    EXPECT_EQ(st.steps.at("w")[0], 1.0);
}

TEST(Optimizer, AdamWSecondStepBiasCorrection) {
    ParamTensor w("w", Matrix{{0.0}}, true);
    std::vector<ParamTensor*> ps{&w};
    auto c = sched(0.01, 4, 0.0, LrSchedule::constant);
    c.kind = OptimizerKind::adamw;
    OptimizerState st;
    w.grad[0] = 1.0;
    optimizer_step(ps, nullptr, c, st, 1);
    const double after1 = w.value[0];
    w.grad[0] = 2.0;
    optimizer_step(ps, nullptr, c, st, 2);
    const double m = 0.9 * 0.1 + 0.1 * 2.0, v = 0.999 * 0.001 + 0.001 * 4.0;
    const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
    EXPECT_NEAR(w.value[0], after1 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
}

TEST(Optimizer, MaskedEntriesKeepWeightsAndMoments) {
    ParamTensor w("w", Matrix{{1.0, 1.0}}, true);
    std::vector<ParamTensor*> ps{&w};
    auto c = sched(0.01, 4, 0.0, LrSchedule::constant);
    c.kind = OptimizerKind::adamw;
    c.weight_decay = 0.1;
    OptimizerState st;
    const TensorMap mask{{"w", Matrix{{1.0, 0.0}}}};
    for (std::size_t t = 1; t <= 3; ++t) {
        w.grad[0] = w.grad[1] = 0.7;
        optimizer_step(ps, &mask, c, st, t);
    }
    EXPECT_NE(w.value[0], 1.0);
    EXPECT_EQ(w.value[1], 1.0);
    EXPECT_EQ(st.m.at("w")[1], 0.0);
    EXPECT_EQ(st.v.at("w")[1], 0.0);
    EXPECT_EQ(st.steps.at("w")[0], 3.0);
    EXPECT_EQ(st.steps.at("w")[1], 0.0);

    // The first unmasked update of entry 1 uses step count 1 for its bias
    // correction, so it matches a fresh first step at the current lr.
    const TensorMap all{{"w", Matrix{{1.0, 1.0}}}};
    w.grad[1] = 0.7;
    optimizer_step(ps, &all, c, st, 4);
    EXPECT_NEAR(w.value[1], 1.0 - 0.01 * (0.7 / (0.7 + 1e-8) + 0.1), 1e-14);
}

TEST(Optimizer, GlobalNormClipping) {
    ParamTensor a("a", Matrix{{6.0}}, true), b("b", Matrix{{0.0, 0.0}}, true);
    a.grad[0] = 6.0;
    b.grad[0] = 0.0;
    b.grad[1] = 8.0;
    std::vector<ParamTensor*> ps{&a, &b};
    EXPECT_DOUBLE_EQ(clip_gradients(ps, 1.0), 10.0);
    EXPECT_DOUBLE_EQ(a.grad[0], 0.6);
    EXPECT_DOUBLE_EQ(b.grad[1], 0.8);
    EXPECT_LE(global_grad_norm(ps), 1.0 + 1e-12);
    // Below the threshold nothing changes.
    EXPECT_DOUBLE_EQ(clip_gradients(ps, 5.0), global_grad_norm(ps));
    EXPECT_DOUBLE_EQ(a.grad[0], 0.6);
}

TEST(Optimizer, ClippedNormNeverExceedsThreshold) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        ParamTensor a("a", Matrix(3, 4), true), b("b", Matrix(1, 4), true);
        a.grad = gaussian_init({3, 4}, 0.0, 1.0 + 10 * rng.uniform(), rng);
        b.grad = gaussian_init({1, 4}, 0.0, 1.0, rng);
        std::vector<ParamTensor*> ps{&a, &b};
        const double clip = 0.1 + rng.uniform();
        clip_gradients(ps, clip);
        EXPECT_LE(global_grad_norm(ps), clip + 1e-12);
    }
}

TEST(Optimizer, NonFiniteGradientAborts) {
    ParamTensor w("w", Matrix{{1.0}}, true);
    w.grad[0] = std::numeric_limits<double>::infinity();
    std::vector<ParamTensor*> ps{&w};
    OptimizerState st;
    EXPECT_THROW(optimizer_step(ps, nullptr, sched(0.1, 1, 0.0, LrSchedule::constant), st, 1), TrainingAborted);
}

TEST(Batching, CoversEveryRowOnceAndKeepsPartialBatch) {
    const Dataset d = separable(37, 1);
    const auto plain = make_batches(d, 10);
    ASSERT_EQ(plain.size(), 4u);
    EXPECT_EQ(plain.back().size(), 7u);
    EXPECT_EQ(plain.front().inputs.row(0)[0], d.inputs(0, 0));

    Rng rng(9);
    const auto shuffled = make_batches(d, 10, &rng);
    std::multiset<double> seen, expect;
    for (const auto& b : shuffled)
        for (std::size_t r = 0; r < b.size(); ++r) seen.insert(b.inputs(r, 1));
    for (std::size_t r = 0; r < d.size(); ++r) expect.insert(d.inputs(r, 1));
    EXPECT_EQ(seen, expect);
    EXPECT_THROW(make_batches(d, 0), ConfigError);
}

TEST(Training, DeterministicForFixedSeed) {
    const Dataset d = separable(128, 2);
    for (auto kind : {StrategyKind::vanilla, StrategyKind::mixout, StrategyKind::dps_mix}) {
        StrategyConfig c;
        c.kind = kind;
        c.p = kind == StrategyKind::vanilla ? 0.0 : 0.3;
        const auto a = train(small_model(1), d, c, adamw(80), Rng(5));
        const auto b = train(small_model(1), d, c, adamw(80), Rng(5));
        const auto other = train(small_model(1), d, c, adamw(80), Rng(6));
        EXPECT_EQ(a.model, b.model) << to_string(kind);
        ASSERT_EQ(a.log.steps.size(), 80u);
        for (std::size_t i = 0; i < 80; ++i) EXPECT_EQ(a.log.steps[i].loss, b.log.steps[i].loss);
        EXPECT_FALSE(a.model == other.model);
    }
}

TEST(Training, ConvergesOnSeparableData) {
    const Dataset d = separable(256, 3);
    const auto r = train(small_model(4), d, StrategyConfig{}, adamw(200, 0.03), Rng(1));
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 16; ++i) first += r.log.steps[i].loss / 16;
    for (std::size_t i = 184; i < 200; ++i) last += r.log.steps[i].loss / 16;
    EXPECT_LT(last, 0.5 * first);
    EXPECT_GT(metric_accuracy(predict(r.model, d.inputs), d.targets), 0.9);
}

TEST(Training, StageAndRefreshColumnsFollowSchedule) {
    StrategyConfig c;
    c.kind = StrategyKind::dps_dense;
    c.p = 0.5;
    c.ur = 0.1;
    const auto r = train(small_model(5), separable(64, 5), c, adamw(100), Rng(2));
    const StageSchedule s(100, 0.1);
    std::size_t refreshes = 0;
    for (const auto& rec : r.log.steps) {
        EXPECT_EQ(rec.stage, s.stage_of(rec.t));
        EXPECT_EQ(rec.refresh, s.is_refresh_step(rec.t));
        refreshes += rec.refresh;
    }
    EXPECT_EQ(refreshes, 5u);
    for (const auto& rec : train(small_model(5), separable(64, 5), StrategyConfig{}, adamw(20), Rng(2)).log.steps)
        EXPECT_EQ(rec.stage, Stage::none);
}

TEST(Timing, PhasesAccountForTheWallClock) {
    StrategyConfig c;
    c.kind = StrategyKind::dps_dense;
    c.p = 0.5;
    const auto r = train(small_model(6, 48), separable(512, 6), c, adamw(400), Rng(3));
    const PhaseTimes& ph = r.log.phases;
    EXPECT_GT(ph.forward, 0.0);
    EXPECT_GT(ph.backward, 0.0);
    EXPECT_GT(ph.optimizer, 0.0);
    EXPECT_GT(ph.strategy_overhead, 0.0);
    EXPECT_NEAR(ph.sum(), r.log.total_seconds, 0.05 * r.log.total_seconds);
}

TEST(Export, StepCsvAndSummaryJson) {
    StrategyConfig c;
    c.kind = StrategyKind::dps_mix;
    c.p = 0.3;
    c.ur = 0.25;
    const auto r = train(small_model(7), separable(32, 7), c, adamw(8), Rng(4));
    std::ostringstream csv;
    write_steps_csv(r.log, csv);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,stage,loss,grad_norm,mask_refresh");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0].substr(0, 4), "1,I,");
    EXPECT_EQ(rows[2].substr(0, 5), "3,II,");
    EXPECT_EQ(rows[2].back(), '1');

    const auto j = log_summary_json(r.log);
    EXPECT_EQ(j["strategy"], "dps_mix(p=0.3,ur=0.25)");
    EXPECT_EQ(j["steps"], 8);
    EXPECT_EQ(j["refreshes"], 2);
    EXPECT_DOUBLE_EQ(j["final_loss"].get<double>(), r.log.steps.back().loss);
    EXPECT_TRUE(j["phases"].contains("strategy_overhead"));
}
