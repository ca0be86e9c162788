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

#include "subnet_tune/metrics.hpp"
#include "subnet_tune/rng.hpp"

using namespace subnet_tune;

namespace {

// Builds prediction/target vectors realizing a given confusion table.
std::pair<std::vector<double>, std::vector<double>> realize(int tp, int tn, int fp, int fn) {
    std::vector<double> p, t;
    auto push = [&](int n, double pred, double target) {
        for (int i = 0; i < n; ++i) {
            p.push_back(pred);
            t.push_back(target);
        }
    };
    push(tp, 1, 1);
    push(tn, 0, 0);
    push(fp, 1, 0);
    push(fn, 0, 1);
    return {p, t};
}

double mcc_of(int tp, int tn, int fp, int fn) {
    auto [p, t] = realize(tp, tn, fp, fn);
    return metric_mcc(p, t);
}

}  // namespace

TEST(Mcc, WorkedExamples) {
    EXPECT_DOUBLE_EQ(mcc_of(5, 5, 0, 0), 1.0);
    EXPECT_DOUBLE_EQ(mcc_of(0, 0, 5, 5), -1.0);
    // (6*3 - 1*2) / sqrt(7 * 8 * 4 * 5)
    EXPECT_NEAR(mcc_of(6, 3, 1, 2), 0.47809, 1e-5);
    EXPECT_DOUBLE_EQ(mcc_of(6, 3, 1, 2), 16.0 / std::sqrt(1120.0));
}

TEST(Mcc, DegenerateMarginalsGiveZero) {
    EXPECT_EQ(mcc_of(5, 0, 5, 0), 0.0);  // always predicts 1
    EXPECT_EQ(mcc_of(0, 4, 0, 3), 0.0);  // always predicts 0
    EXPECT_EQ(mcc_of(3, 0, 0, 0), 0.0);  // one class only
}

TEST(Mcc, SymmetricUnderPolaritySwap) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const int tp = static_cast<int>(rng.below(20)), tn = static_cast<int>(rng.below(20));
        const int fp = static_cast<int>(rng.below(20)), fn = static_cast<int>(rng.below(20)) + 1;
        // Swapping which class is positive exchanges tp<->tn and fp<->fn.
        EXPECT_NEAR(mcc_of(tp, tn, fp, fn), mcc_of(tn, tp, fn, fp), 1e-15);
        // Transposing the table (predictions <-> targets) leaves MCC unchanged.
        EXPECT_NEAR(mcc_of(tp, tn, fp, fn), mcc_of(tp, tn, fn, fp), 1e-15);
        const double m = mcc_of(tp, tn, fp, fn);
        EXPECT_GE(m, -1.0);
        EXPECT_LE(m, 1.0);
    }
}

TEST(Mcc, RejectsNonBinaryLabels) {
    const std::vector<double> p{0, 1, 2}, t{0, 1, 1};
    EXPECT_THROW(metric_mcc(p, t), DomainError);
}

TEST(Accuracy, ExactMatchesOnly) {
    const std::vector<double> p{0, 1, 2, 2}, t{0, 1, 1, 2};
    EXPECT_DOUBLE_EQ(metric_accuracy(p, t), 0.75);
    EXPECT_THROW(metric_accuracy(std::vector<double>{1}, std::vector<double>{1, 2}), DimensionError);
    EXPECT_THROW(metric_accuracy(std::vector<double>{}, std::vector<double>{}), DimensionError);
}

TEST(Mse, MeanSquaredError) {
    const std::vector<double> p{1.0, 2.0, 4.0}, t{1.0, 0.0, 1.0};
    EXPECT_DOUBLE_EQ(metric_mse(p, t), (0.0 + 4.0 + 9.0) / 3.0);
    EXPECT_DOUBLE_EQ(compute_metric(Metric::mse, p, t), metric_mse(p, t));
}

TEST(MetricNames, RoundTripAndOrientation) {
    for (auto m : {Metric::accuracy, Metric::mcc, Metric::mse}) EXPECT_EQ(metric_from_string(to_string(m)), m);
    EXPECT_THROW(metric_from_string("f1"), ConfigError);
    EXPECT_TRUE(higher_is_better(Metric::accuracy));
    EXPECT_TRUE(higher_is_better(Metric::mcc));
    EXPECT_FALSE(higher_is_better(Metric::mse));
}

TEST(Cases, MajorityVoteOverRuns) {
    // Example 0: right 10/10, example 1: right 6/10, example 2: 5/10, example 3: right 4/10, example 4: 0/10.
    std::vector<std::vector<bool>> correct(10, std::vector<bool>(5));
    for (int r = 0; r < 10; ++r) {
        correct[r][0] = true;
        correct[r][1] = r < 6;
        correct[r][2] = r < 5;
        correct[r][3] = r < 4;
        correct[r][4] = false;
    }
    const CaseSplit s = case_analysis(correct);
    EXPECT_DOUBLE_EQ(s.easy_fraction, 2.0 / 5.0);
    EXPECT_DOUBLE_EQ(s.hard_fraction, 2.0 / 5.0);
}

TEST(Cases, EvenSplitIsNeither) {
    std::vector<std::vector<bool>> correct(10, std::vector<bool>(1));
    for (int r = 0; r < 5; ++r) correct[r][0] = true;
    const CaseSplit s = case_analysis(correct);
    EXPECT_EQ(s.easy_fraction, 0.0);
    EXPECT_EQ(s.hard_fraction, 0.0);
}

TEST(Cases, FractionsNeverExceedOne) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t runs = 1 + rng.below(12), n = 1 + rng.below(30);
        std::vector<std::vector<bool>> correct(runs, std::vector<bool>(n));
        for (auto& r : correct)
            for (std::size_t e = 0; e < n; ++e) r[e] = rng.uniform() < 0.6;
        const CaseSplit s = case_analysis(correct);
        EXPECT_LE(s.easy_fraction + s.hard_fraction, 1.0 + 1e-15);
        if (runs % 2 == 1) {
            EXPECT_NEAR(s.easy_fraction + s.hard_fraction, 1.0, 1e-12);
        }
    }
}

TEST(Cases, RejectsRaggedOrEmptyTables) {
    EXPECT_THROW(case_analysis({}), DomainError);
    EXPECT_THROW(case_analysis({{true, false}, {true}}), DimensionError);
}

TEST(FailedRun, StrictlyBelowReference) {
    EXPECT_TRUE(failed_run_flag(78.0, 78.88));
    EXPECT_FALSE(failed_run_flag(78.88, 78.88));
    EXPECT_FALSE(failed_run_flag(80.0, 78.88));
    // Error metrics: a larger error is worse.
    EXPECT_TRUE(failed_run_flag(0.30, 0.25, false));
    EXPECT_FALSE(failed_run_flag(0.25, 0.25, false));
    EXPECT_FALSE(failed_run_flag(0.20, 0.25, false));
}

TEST(Summary, SampleStandardDeviation) {
    const std::vector<double> xs{2, 4, 4, 4, 5, 5, 7, 9};
    const SummaryStats s = summarize(xs);
    EXPECT_EQ(s.n, 8u);
    EXPECT_DOUBLE_EQ(s.mean, 5.0);
    EXPECT_DOUBLE_EQ(s.std, std::sqrt(32.0 / 7.0));
    EXPECT_EQ(s.min, 2.0);
    EXPECT_EQ(s.max, 9.0);
    EXPECT_TRUE(s.std_defined);
}

TEST(Summary, SingleValueHasUndefinedSpread) {
    const SummaryStats s = summarize(std::vector<double>{0.7});
    EXPECT_EQ(s.mean, 0.7);
    EXPECT_FALSE(s.std_defined);
    EXPECT_EQ(summarize(std::vector<double>{}).n, 0u);
}
