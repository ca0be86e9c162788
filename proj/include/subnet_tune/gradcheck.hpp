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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "subnet_tune/model.hpp"
#include "subnet_tune/strategy.hpp"

namespace subnet_tune {

struct GradCheckOptions {
    double step = 1e-6;
    double tolerance = 1e-4;
    // Differences below this are treated as agreement regardless of scale.
    double abs_floor = 1e-6;
};

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double tolerance = 0.0;
    bool passed = true;

    [[nodiscard]] const ParamCheck* find(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return &p;
        return nullptr;
    }
    [[nodiscard]] double max_rel_error() const {
        double m = 0.0;
        for (const auto& p : params) m = std::max(m, p.max_rel_error);
        return m;
    }
};

/// |a - n| / max(|a|, |n|, abs_floor / tol). An entry with rel <= tol agrees
/// either relatively or within the absolute floor.
inline double gradient_rel_error(double analytic, double numeric, const GradCheckOptions& opt) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.abs_floor / opt.tolerance});
    return std::abs(analytic - numeric) / denom;
}

/// Central-difference check of `analytic[i]` against `loss()` evaluated while
/// perturbing `params[i]->value`. Values are restored afterwards.
inline GradCheckReport check_gradients(std::span<ParamTensor* const> params, std::span<const Matrix> analytic,
                                       const std::function<double()>& loss, const GradCheckOptions& opt = {}) {
    if (!(opt.step > 0.0)) throw DomainError("gradient check step must be positive");
    if (params.size() != analytic.size()) throw DimensionError("gradient check: params/analytic count differ");
    GradCheckReport report;
    report.tolerance = opt.tolerance;
    for (std::size_t k = 0; k < params.size(); ++k) {
        ParamTensor& p = *params[k];
        require_same_shape(p.value, analytic[k], "gradient check");
        ParamCheck pc{p.name};
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + opt.step;
            const double up = loss();
            p.value[i] = orig - opt.step;
            const double down = loss();
            p.value[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double err = gradient_rel_error(analytic[k][i], numeric, opt);
            if (err > pc.max_rel_error) {
                pc.max_rel_error = err;
                pc.worst_index = i;
            }
        }
        pc.passed = pc.max_rel_error <= opt.tolerance;
        report.passed = report.passed && pc.passed;
        report.params.push_back(std::move(pc));
    }
    return report;
}

/// Checks the gradients currently stored in `model` (however they were
/// produced) against finite differences of the batch loss.
inline GradCheckReport check_model_gradients(MlpModel& model, const Batch& batch, const GradCheckOptions& opt = {}) {
    std::vector<ParamTensor*> ps = model.params();
    std::vector<Matrix> analytic;
    for (auto* p : ps) analytic.push_back(p->grad);
    return check_gradients(ps, analytic, [&] { return loss_only(model, batch); }, opt);
}

inline GradCheckReport gradient_check(MlpModel model, const Batch& batch, const GradCheckOptions& opt = {}) {
    loss_and_grads(model, batch);
    return check_model_gradients(model, batch, opt);
}

/// Gradient of the loss with respect to the underlying weights W when the
/// forward pass sees mix_weights(W, anchor, mask, p) in place of each
/// maskable tensor. The analytic side goes through the strategy code path
/// (mix, backward, restore); the numeric side perturbs W and re-mixes.
inline GradCheckReport mixed_gradient_check(MlpModel model, const Batch& batch, const TensorMap& masks, double p,
                                            const GradCheckOptions& opt = {}) {
    detail::WeightMixer mixer;
    auto anchor = [](const ParamTensor& t) -> const Matrix& { return t.pretrained; };
    mixer.mix(model, masks, p, anchor);
    loss_and_grads(model, batch);
    mixer.restore(model, masks, p);

    std::vector<ParamTensor*> ps = model.params();
    std::vector<Matrix> analytic;
    for (auto* t : ps) analytic.push_back(t->grad);
    auto loss = [&] {
        MlpModel mixed = model;
        mixed.for_each_param([&](ParamTensor& t) {
            if (t.maskable) t.value = mix_weights(t.value, t.pretrained, masks.at(t.name), p);
        });
        return loss_only(mixed, batch);
    };
    return check_gradients(ps, analytic, loss, opt);
}

}  // namespace subnet_tune
