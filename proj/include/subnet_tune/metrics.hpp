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
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "subnet_tune/errors.hpp"

namespace subnet_tune {

enum class Metric { accuracy, mcc, mse };

inline const char* to_string(Metric m) {
    switch (m) {
        case Metric::accuracy: return "accuracy";
        case Metric::mcc: return "mcc";
        case Metric::mse: return "mse";
    }
    return "?";
}

inline Metric metric_from_string(const std::string& s) {
    if (s == "accuracy") return Metric::accuracy;
    if (s == "mcc") return Metric::mcc;
    if (s == "mse") return Metric::mse;
    throw ConfigError("unknown metric '" + s + "'");
}

inline bool higher_is_better(Metric m) { return m != Metric::mse; }

namespace detail {
inline void check_lengths(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionError("predictions (" + std::to_string(a.size()) + ") and targets (" +
                             std::to_string(b.size()) + ") differ in length");
    if (a.empty()) throw DimensionError("empty prediction set");
}
}  // namespace detail

inline double metric_accuracy(std::span<const double> preds, std::span<const double> targets) {
    detail::check_lengths(preds, targets);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == targets[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

inline double metric_mse(std::span<const double> preds, std::span<const double> targets) {
    detail::check_lengths(preds, targets);
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += (preds[i] - targets[i]) * (preds[i] - targets[i]);
    return s / static_cast<double>(preds.size());
}

struct Confusion {
    double tp = 0, tn = 0, fp = 0, fn = 0;
};

/// Matthews correlation from a binary confusion table; 0 when any marginal
/// is empty.
inline double mcc_from_confusion(const Confusion& c) {
    const double denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
    if (denom == 0.0) return 0.0;
    return (c.tp * c.tn - c.fp * c.fn) / std::sqrt(denom);
}

/// Labels must be 0 or 1; class 1 is the positive class.
inline double metric_mcc(std::span<const double> preds, std::span<const double> targets) {
    detail::check_lengths(preds, targets);
    Confusion c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double p = preds[i], t = targets[i];
        if ((p != 0.0 && p != 1.0) || (t != 0.0 && t != 1.0)) throw DomainError("MCC needs binary labels");
        if (p == 1.0) (t == 1.0 ? c.tp : c.fp) += 1;
        else (t == 0.0 ? c.tn : c.fn) += 1;
    }
    return mcc_from_confusion(c);
}

inline double compute_metric(Metric m, std::span<const double> preds, std::span<const double> targets) {
    switch (m) {
        case Metric::accuracy: return metric_accuracy(preds, targets);
        case Metric::mcc: return metric_mcc(preds, targets);
        case Metric::mse: return metric_mse(preds, targets);
    }
    throw ConfigError("unknown metric");
}

struct CaseSplit {
    double easy_fraction = 0.0;
    double hard_fraction = 0.0;
};

/// correct[run][example]. An example is easy when it is predicted correctly
/// in a strict majority of runs and hard when it is wrong in a strict
/// majority; with 10 runs that means more than 5 either way, and a 5/5 split
/// counts as neither.
inline CaseSplit case_analysis(const std::vector<std::vector<bool>>& correct) {
    if (correct.empty() || correct.front().empty()) throw DomainError("case analysis needs a non-empty table");
    const std::size_t runs = correct.size(), n = correct.front().size();
    for (const auto& r : correct)
        if (r.size() != n) throw DimensionError("case analysis: runs cover different example counts");
    std::size_t easy = 0, hard = 0;
    for (std::size_t e = 0; e < n; ++e) {
        std::size_t ok = 0;
        for (const auto& r : correct) ok += r[e];
        if (2 * ok > runs) ++easy;
        if (2 * (runs - ok) > runs) ++hard;
    }
    return {static_cast<double>(easy) / static_cast<double>(n), static_cast<double>(hard) / static_cast<double>(n)};
}

/// True when the strategy's seed-averaged score falls strictly below
/// vanilla's. For error metrics (higher_is_better = false) "below" means a
/// larger error.
inline bool failed_run_flag(double strategy_mean, double vanilla_mean, bool higher_better = true) {
    return higher_better ? strategy_mean < vanilla_mean : strategy_mean > vanilla_mean;
}

struct SummaryStats {
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 when n < 2
    double min = 0.0;
    double max = 0.0;
    bool std_defined = false;
};

inline SummaryStats summarize(std::span<const double> xs) {
    SummaryStats s;
    s.n = xs.size();
    if (xs.empty()) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    if (xs.size() >= 2) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        s.std_defined = true;
    }
    return s;
}

}  // namespace subnet_tune
