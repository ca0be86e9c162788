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

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "subnet_tune/errors.hpp"
#include "subnet_tune/selection.hpp"
#include "subnet_tune/tensor.hpp"

namespace subnet_tune {

enum class OptimizerKind { sgd, adamw };
enum class LrSchedule { linear, constant };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 0.1;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = std::numeric_limits<double>::infinity();
    double warmup_fraction = 0.0;
    std::size_t total_steps = 1;
    LrSchedule schedule = LrSchedule::linear;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
        if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction outside [0,1)");
        if (total_steps == 0) throw ConfigError("total_steps must be at least 1");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas outside [0,1)");
        if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    }

    [[nodiscard]] std::size_t warmup_steps() const {
        return static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
    }
};

/// Linear warmup from 0 to lr, then linear decay reaching 0 at total_steps.
inline double lr_at(const OptimizerConfig& cfg, std::size_t t) {
    if (t < 1 || t > cfg.total_steps)
        throw ScheduleError("lr_at: step " + std::to_string(t) + " outside [1, " + std::to_string(cfg.total_steps) +
                            "]");
    const auto w = cfg.warmup_steps();
    const double td = static_cast<double>(t);
    if (t <= w) return cfg.lr * td / static_cast<double>(w);
    if (cfg.schedule == LrSchedule::constant) return cfg.lr;
    const double total = static_cast<double>(cfg.total_steps);
    return cfg.lr * (total - td) / (total - static_cast<double>(w));
}

/// AdamW moments plus a per-entry step count, so entries skipped by an update
/// mask keep an honest bias correction.
struct OptimizerState {
    TensorMap m;
    TensorMap v;
    TensorMap steps;
    std::vector<double> bias1;  // 1 - beta1^k, indexed by step count k
    std::vector<double> bias2;

    void extend_bias(const OptimizerConfig& cfg, std::size_t k) {
        while (bias1.size() <= k) {
            const auto n = static_cast<double>(bias1.size());
            bias1.push_back(1.0 - std::pow(cfg.beta1, n));
            bias2.push_back(1.0 - std::pow(cfg.beta2, n));
        }
    }
};

struct StepStats {
    double lr = 0.0;
    double grad_norm = 0.0;     // before clipping
    double applied_norm = 0.0;  // after clipping
};

inline double global_grad_norm(std::span<ParamTensor* const> params) {
    double acc = 0.0;
    for (const auto* p : params) acc += squared_norm(p->grad);
    return std::sqrt(acc);
}

/// Clips the global gradient norm in place; returns the pre-clip norm.
inline double clip_gradients(std::span<ParamTensor* const> params, double clip_norm) {
    const double norm = global_grad_norm(params);
    if (norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (auto* p : params)
            for (double& g : p->grad.flat()) g *= scale;
    }
    return norm;
}

/// Applies one update with the gradients currently in `params` (already
/// masked by the strategy). Entries whose `update_masks` value is 0 keep
/// their weight and moments. The update is computed densely and committed
/// per entry, so its cost does not depend on how many entries a mask keeps.
inline StepStats optimizer_step(std::span<ParamTensor* const> params, const TensorMap* update_masks,
                                const OptimizerConfig& cfg, OptimizerState& state, std::size_t t) {
    StepStats stats;
    stats.lr = lr_at(cfg, t);
    stats.grad_norm = clip_gradients(params, cfg.clip_norm);
    stats.applied_norm = global_grad_norm(params);
    if (!std::isfinite(stats.grad_norm)) throw TrainingAborted("non-finite gradient norm at step " + std::to_string(t));

    for (ParamTensor* p : params) {
        const Matrix* mask = nullptr;
        if (update_masks) {
            auto it = update_masks->find(p->name);
            if (it != update_masks->end()) mask = &it->second;
        }
        auto& w = p->value;
        const auto& g = p->grad;
        if (cfg.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double next = w[i] - stats.lr * g[i];
                if (!mask || (*mask)[i] != 0.0) w[i] = next;
            }
        } else {
            auto& m = state.m.try_emplace(p->name, p->shape()).first->second;
            auto& v = state.v.try_emplace(p->name, p->shape()).first->second;
            auto& n = state.steps.try_emplace(p->name, p->shape()).first->second;
            state.extend_bias(cfg, t);
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double ni = n[i] + 1.0;
                const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                const auto k = static_cast<std::size_t>(ni);
                const double mhat = mi / state.bias1[k];
                const double vhat = vi / state.bias2[k];
                const double wi = w[i] - stats.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i]);
                if (mask && (*mask)[i] == 0.0) continue;
                n[i] = ni;
                m[i] = mi;
                v[i] = vi;
                w[i] = wi;
            }
        }
        if (!w.all_finite())
            throw TrainingAborted("non-finite update to '" + p->name + "' at step " + std::to_string(t));
    }
    return stats;
}

}  // namespace subnet_tune
