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

// Update strategies for subnetwork fine-tuning.
//
// Every strategy plugs into the training step through the same hooks:
//
//   prepare        once, before step 1 (CHILD-TUNING_D's importance pre-pass)
//   begin_step     schedule bookkeeping; mask refresh happens here
//   pre_forward    swap in the mixed-rescaled weights (Mixout, DPS Mix)
//   post_backward  restore weights, chain/mask gradients, accumulate scores
//   update_mask    entries the optimizer may touch this step
//   post_step      freezing repair (no built-in strategy needs one)
//
// Only maskable parameter blocks are ever mixed or masked; biases and the
// task head always take the full update.

#pragma once

#include <cstdio>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "subnet_tune/model.hpp"
#include "subnet_tune/optimizer.hpp"
#include "subnet_tune/schedule.hpp"
#include "subnet_tune/selection.hpp"

namespace subnet_tune {

enum class StrategyKind { vanilla, mixout, child_tuning_d, dps_dense, dps_mix };

inline const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::vanilla: return "vanilla";
        case StrategyKind::mixout: return "mixout";
        case StrategyKind::child_tuning_d: return "child_tuning_d";
        case StrategyKind::dps_dense: return "dps_dense";
        case StrategyKind::dps_mix: return "dps_mix";
    }
    return "?";
}

inline StrategyKind strategy_kind_from_string(const std::string& s) {
    for (auto k : {StrategyKind::vanilla, StrategyKind::mixout, StrategyKind::child_tuning_d, StrategyKind::dps_dense,
                   StrategyKind::dps_mix})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown strategy kind '" + s + "'");
}

/// What DPS Mix adds into GAM during Stage I.
enum class AccumulationMode { squared, raw };

struct StrategyConfig {
    StrategyKind kind = StrategyKind::vanilla;
    double p = 0.0;   // drop fraction; keep fraction is 1 - p
    double ur = 0.1;  // update ratio, DPS kinds only
    std::size_t penalty_boundary = kPenaltyBoundary;
    AccumulationMode accumulation = AccumulationMode::squared;
    std::string label;  // display name; derived when empty

    [[nodiscard]] bool uses_schedule() const noexcept {
        return kind == StrategyKind::dps_dense || kind == StrategyKind::dps_mix;
    }

    void validate() const {
        if (!(p >= 0.0 && p < 1.0)) throw ConfigError("strategy p=" + std::to_string(p) + " outside [0,1)");
        if (uses_schedule() && !(ur > 0.0 && ur <= 0.5))
            throw ConfigError("strategy ur=" + std::to_string(ur) + " outside (0,0.5]");
    }

    [[nodiscard]] std::string display_name() const {
        if (!label.empty()) return label;
        std::string s = to_string(kind);
        char buf[64];
        if (kind != StrategyKind::vanilla) {
            std::snprintf(buf, sizeof buf, "(p=%g", p);
            s += buf;
            if (uses_schedule()) {
                std::snprintf(buf, sizeof buf, ",ur=%g", ur);
                s += buf;
            }
            s += ")";
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Elementwise building blocks

/// Mixed-rescaled weights (M W + (I - M) A - p A) / (1 - p), evaluated per
/// entry as  M ? W + p (W - A) / (1 - p) : A.  The two forms are equal
/// algebraically; this one returns A exactly when W == A and W exactly when
/// p == 0, which the reduction tests depend on.
inline Matrix mix_weights(const Matrix& w, const Matrix& anchor, const Matrix& mask, double p) {
    require_same_shape(w, anchor, "mix_weights");
    require_same_shape(w, mask, "mix_weights");
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("mixing requires p in [0,1)");
    const double scale = p / (1.0 - p);
    Matrix out(w.shape());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = mask[i] != 0.0 ? w[i] + scale * (w[i] - anchor[i]) : anchor[i];
    return out;
}

/// dL/dW = dL/dW~ * M / (1 - p): only kept entries receive gradient.
inline void chain_mixed_gradient(Matrix& grad, const Matrix& mask, double p) {
    require_same_shape(grad, mask, "chain_mixed_gradient");
    const double denom = 1.0 - p;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = mask[i] != 0.0 ? grad[i] / denom : 0.0;
}

inline void mask_gradient(Matrix& grad, const Matrix& mask) {
    require_same_shape(grad, mask, "mask_gradient");
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
}

inline void accumulate_squared_grads(GradAccumulator& gam, MlpModel& model) {
    model.for_each_param([&](const ParamTensor& p) {
        if (!p.maskable) return;
        auto& acc = gam.sums.at(p.name);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p.grad[i] * p.grad[i];
    });
}

inline MaskSet bernoulli_mask_set(const MlpModel& model, double keep_prob, Rng& rng) {
    MaskSet out;
    out.provenance = MaskProvenance::bernoulli;
    model.for_each_param([&](const ParamTensor& p) {
        if (p.maskable) out.masks.emplace(p.name, bernoulli_mask(p.shape(), keep_prob, rng));
    });
    return out;
}

inline MaskSet all_ones_mask(const MlpModel& model) {
    MaskSet out;
    out.masks = zeros_like_maskable(model);
    for (auto& [_, m] : out.masks) m.fill(1.0);
    return out;
}

/// Squared-gradient importance of every maskable entry, summed over the whole
/// training set at the pretrained weights; no parameter is updated. Returns
/// the fixed CHILD-TUNING_D mask together with the accumulated scores.
inline MaskSet childtuning_prepass(const MlpModel& model, std::span<const Batch> training_set, double p,
                                   GradAccumulator* scores_out = nullptr) {
    if (training_set.empty()) throw DomainError("child-tuning pre-pass needs a non-empty training set");
    MlpModel at_pretrained = model;
    at_pretrained.for_each_param([](ParamTensor& t) { t.value = t.pretrained; });
    GradAccumulator acc = GradAccumulator::for_model(at_pretrained);
    for (const Batch& b : training_set) {
        loss_and_grads(at_pretrained, b);
        accumulate_squared_grads(acc, at_pretrained);
    }
    MaskSet mask = ranked_mask_dense(acc, p);
    mask.provenance = MaskProvenance::fixed;
    if (scores_out) *scores_out = std::move(acc);
    return mask;
}

// ---------------------------------------------------------------------------
// Strategy objects

struct StepInfo {
    Stage stage = Stage::none;
    bool refresh = false;
    std::optional<std::size_t> entered_cycle;
};

class UpdateStrategy {
public:
    explicit UpdateStrategy(StrategyConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
    virtual ~UpdateStrategy() = default;
    UpdateStrategy(const UpdateStrategy&) = delete;
    UpdateStrategy& operator=(const UpdateStrategy&) = delete;

    [[nodiscard]] const StrategyConfig& config() const noexcept { return cfg_; }

    virtual void prepare(MlpModel& /*model*/, std::span<const Batch> /*training_set*/, std::size_t /*total_steps*/) {}
    virtual StepInfo begin_step(std::size_t /*t*/, const MlpModel& /*model*/) { return {}; }
    virtual void pre_forward(MlpModel& /*model*/, Rng& /*rng*/) {}
    virtual void post_backward(MlpModel& /*model*/) {}
    [[nodiscard]] virtual const TensorMap* update_mask() const { return nullptr; }
    virtual void post_step(MlpModel& /*model*/) {}

    [[nodiscard]] virtual nlohmann::json dump_state() const { return {{"strategy", cfg_.display_name()}}; }

protected:
    StrategyConfig cfg_;
};

class VanillaStrategy final : public UpdateStrategy {
public:
    explicit VanillaStrategy(StrategyConfig cfg = {}) : UpdateStrategy(std::move(cfg)) {}
};

namespace detail {

/// Swaps each maskable tensor's value for its mixed-rescaled version and
/// remembers the originals; restore() puts them back and chains gradients.
class WeightMixer {
public:
    template <typename AnchorFn>
    void mix(MlpModel& model, const TensorMap& masks, double p, AnchorFn&& anchor_of) {
        saved_.clear();
        model.for_each_param([&](ParamTensor& t) {
            if (!t.maskable) return;
            const Matrix& mask = masks.at(t.name);
            Matrix mixed = mix_weights(t.value, anchor_of(t), mask, p);
            saved_.emplace(t.name, std::move(t.value));
            t.value = std::move(mixed);
        });
    }

    void restore(MlpModel& model, const TensorMap& masks, double p) {
        model.for_each_param([&](ParamTensor& t) {
            auto it = saved_.find(t.name);
            if (it == saved_.end()) return;
            t.value = std::move(it->second);
            chain_mixed_gradient(t.grad, masks.at(t.name), p);
        });
        saved_.clear();
    }

private:
    TensorMap saved_;
};

}  // namespace detail

/// Fresh Bernoulli(1 - p) mask every step; dropped entries are replaced by
/// their pretrained values and the rest rescaled.
class MixoutStrategy final : public UpdateStrategy {
public:
    explicit MixoutStrategy(StrategyConfig cfg) : UpdateStrategy(std::move(cfg)) {}

    void pre_forward(MlpModel& model, Rng& rng) override {
        mask_ = bernoulli_mask_set(model, 1.0 - cfg_.p, rng);
        mixer_.mix(model, mask_.masks, cfg_.p, [](const ParamTensor& t) -> const Matrix& { return t.pretrained; });
    }
    void post_backward(MlpModel& model) override { mixer_.restore(model, mask_.masks, cfg_.p); }
    [[nodiscard]] const TensorMap* update_mask() const override { return &mask_.masks; }

    [[nodiscard]] const MaskSet& last_mask() const noexcept { return mask_; }

private:
    MaskSet mask_;
    detail::WeightMixer mixer_;
};

/// Fixed mask from a full-training-set pre-pass; unselected entries stay at
/// their pretrained values for the whole run.
class ChildTuningStrategy final : public UpdateStrategy {
public:
    explicit ChildTuningStrategy(StrategyConfig cfg) : UpdateStrategy(std::move(cfg)) {}

    void prepare(MlpModel& model, std::span<const Batch> training_set, std::size_t) override {
        mask_ = childtuning_prepass(model, training_set, cfg_.p, &scores_);
    }
    void post_backward(MlpModel& model) override {
        for (auto& [name, m] : mask_.masks) mask_gradient(model.param(name).grad, m);
    }
    [[nodiscard]] const TensorMap* update_mask() const override { return &mask_.masks; }

    /// Uses a mask computed elsewhere instead of running the pre-pass.
    void set_mask(MaskSet mask) {
        mask_ = std::move(mask);
        mask_.provenance = MaskProvenance::fixed;
    }
    [[nodiscard]] const MaskSet& mask() const noexcept { return mask_; }

    [[nodiscard]] nlohmann::json dump_state() const override {
        return {{"strategy", cfg_.display_name()},
                {"mask", mask_to_json(mask_)},
                {"prepass", accumulators_to_json(scores_)}};
    }

private:
    MaskSet mask_;
    GradAccumulator scores_;
};

/// Shared clock and accumulators for the two cyclic strategies.
class CyclicStrategy : public UpdateStrategy {
public:
    using UpdateStrategy::UpdateStrategy;

    [[nodiscard]] const StageSchedule& schedule() const noexcept { return schedule_; }
    [[nodiscard]] const GradAccumulator& gam() const noexcept { return gam_; }
    [[nodiscard]] const MaskSet& current_mask() const noexcept { return mask_; }

    void prepare(MlpModel& model, std::span<const Batch>, std::size_t total_steps) override {
        schedule_ = StageSchedule(total_steps, cfg_.ur);
        gam_ = GradAccumulator::for_model(model);
        mask_ = {};
        init(model);
    }

    StepInfo begin_step(std::size_t t, const MlpModel& model) override {
        const ScheduleEvents ev = schedule_.advance();
        if (ev.step != t)
            throw ScheduleError("strategy clock at " + std::to_string(ev.step) + " but trainer at " + std::to_string(t));
        StepInfo info;
        info.stage = schedule_.stage();
        info.refresh = ev.refresh_mask;
        info.entered_cycle = ev.entered_cycle;
        if (ev.entered_cycle) reset_accumulators();
        if (ev.refresh_mask) {
            if (gam_.empty()) throw DomainError("mask refresh with an empty accumulator");
            refresh(model);
            reset_accumulators();
        }
        stage_ = info.stage;
        return info;
    }

    [[nodiscard]] nlohmann::json dump_state() const override {
        nlohmann::json j{{"strategy", cfg_.display_name()},
                         {"step", schedule_.step()},
                         {"stage", to_string(stage_)},
                         {"accumulators", accumulators(gam_)}};
        if (!mask_.empty()) j["mask"] = mask_to_json(mask_);
        return j;
    }

protected:
    virtual void init(MlpModel& /*model*/) {}
    virtual void refresh(const MlpModel& model) = 0;
    virtual void reset_accumulators() { gam_.reset(); }
    [[nodiscard]] virtual nlohmann::json accumulators(const GradAccumulator& g) const {
        return accumulators_to_json(g);
    }

    StageSchedule schedule_;
    GradAccumulator gam_;
    MaskSet mask_;
    Stage stage_ = Stage::none;
};

/// Stage I: full update, squared gradients accumulate. Stage II: only the
/// top (1 - p) entries by accumulated score move; the rest hold the values
/// they had when the stage began.
class DpsDenseStrategy final : public CyclicStrategy {
public:
    explicit DpsDenseStrategy(StrategyConfig cfg) : CyclicStrategy(std::move(cfg)) {}

    void post_backward(MlpModel& model) override {
        if (stage_ == Stage::one) {
            accumulate_squared_grads(gam_, model);
        } else {
            for (auto& [name, m] : mask_.masks) mask_gradient(model.param(name).grad, m);
        }
    }
    [[nodiscard]] const TensorMap* update_mask() const override {
        return stage_ == Stage::two ? &mask_.masks : nullptr;
    }

protected:
    void refresh(const MlpModel&) override { mask_ = ranked_mask_dense(gam_, cfg_.p); }
};

/// Stage I behaves like Mixout against the pretrained weights while counting
/// how often each entry was kept (FAM) and its squared gradient (GAM).
/// Stage II mixes against a snapshot W' taken at the refresh step, with a
/// fixed mask chosen by the frequency-penalized score.
class DpsMixStrategy final : public CyclicStrategy {
public:
    explicit DpsMixStrategy(StrategyConfig cfg) : CyclicStrategy(std::move(cfg)) {}

    [[nodiscard]] const FreqAccumulator& fam() const noexcept { return fam_; }
    [[nodiscard]] const TensorMap& stage_two_anchor() const noexcept { return anchor_; }
    [[nodiscard]] const MaskSet& step_mask() const noexcept { return stage_ == Stage::one ? step_mask_ : mask_; }

    void pre_forward(MlpModel& model, Rng& rng) override {
        if (stage_ == Stage::one) {
            step_mask_ = bernoulli_mask_set(model, 1.0 - cfg_.p, rng);
            mixer_.mix(model, step_mask_.masks, cfg_.p,
                       [](const ParamTensor& t) -> const Matrix& { return t.pretrained; });
        } else {
            mixer_.mix(model, mask_.masks, cfg_.p,
                       [this](const ParamTensor& t) -> const Matrix& { return anchor_.at(t.name); });
        }
    }

    void post_backward(MlpModel& model) override {
        const TensorMap& masks = stage_ == Stage::one ? step_mask_.masks : mask_.masks;
        mixer_.restore(model, masks, cfg_.p);
        if (stage_ != Stage::one) return;
        model.for_each_param([&](const ParamTensor& p) {
            if (!p.maskable) return;
            const Matrix& m = masks.at(p.name);
            auto& g = gam_.sums.at(p.name);
            auto& f = fam_.counts.at(p.name);
            for (std::size_t i = 0; i < m.size(); ++i) {
                if (m[i] == 0.0) continue;
                g[i] += cfg_.accumulation == AccumulationMode::squared ? p.grad[i] * p.grad[i] : p.grad[i];
                f[i] += 1.0;
            }
        });
    }

    [[nodiscard]] const TensorMap* update_mask() const override {
        return stage_ == Stage::one ? &step_mask_.masks : &mask_.masks;
    }

protected:
    void init(MlpModel& model) override {
        fam_ = FreqAccumulator::for_model(model);
        anchor_.clear();
    }
    void refresh(const MlpModel& model) override {
        mask_ = ranked_mask_mix(gam_, fam_, schedule_.stage_length(), cfg_.p, cfg_.penalty_boundary);
        anchor_.clear();
        model.for_each_param([&](const ParamTensor& p) {
            if (p.maskable) anchor_.emplace(p.name, p.value);
        });
    }
    void reset_accumulators() override {
        gam_.reset();
        fam_.reset();
    }
    [[nodiscard]] nlohmann::json accumulators(const GradAccumulator& g) const override {
        return accumulators_to_json(g, &fam_);
    }

private:
    FreqAccumulator fam_;
    TensorMap anchor_;
    MaskSet step_mask_;
    detail::WeightMixer mixer_;
};

inline std::unique_ptr<UpdateStrategy> make_strategy(const StrategyConfig& cfg) {
    switch (cfg.kind) {
        case StrategyKind::vanilla: return std::make_unique<VanillaStrategy>(cfg);
        case StrategyKind::mixout: return std::make_unique<MixoutStrategy>(cfg);
        case StrategyKind::child_tuning_d: return std::make_unique<ChildTuningStrategy>(cfg);
        case StrategyKind::dps_dense: return std::make_unique<DpsDenseStrategy>(cfg);
        case StrategyKind::dps_mix: return std::make_unique<DpsMixStrategy>(cfg);
    }
    throw ConfigError("unknown strategy kind");
}

}  // namespace subnet_tune
