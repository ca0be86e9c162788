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

// Feed-forward network with hand-derived reverse-mode gradients. This is the
// stand-in for a pretrained model: every parameter block carries its
// pretrained snapshot so update strategies can mix or freeze against it.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "subnet_tune/errors.hpp"
#include "subnet_tune/rng.hpp"
#include "subnet_tune/tensor.hpp"

namespace subnet_tune {

enum class Activation { tanh, relu, identity };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + s + "'");
}

enum class HeadKind { classification, regression };

struct Head {
    HeadKind kind = HeadKind::classification;
    std::size_t num_classes = 2;

    [[nodiscard]] std::size_t out_dim() const noexcept { return kind == HeadKind::regression ? 1 : num_classes; }
    static Head classification(std::size_t k) { return {HeadKind::classification, k}; }
    static Head regression() { return {HeadKind::regression, 1}; }
};

/// weight is (in x out); the layer computes act(x W + b).
struct Layer {
    ParamTensor weight;
    ParamTensor bias;
    Activation activation = Activation::identity;
};

/// Inputs plus one target per row. Classification targets hold class indices.
struct Batch {
    Matrix inputs;
    std::vector<double> targets;

    [[nodiscard]] std::size_t size() const noexcept { return targets.size(); }
};

using Dataset = Batch;

inline Batch take_rows(const Batch& src, std::span<const std::size_t> idx) {
    Batch out{Matrix(idx.size(), src.inputs.cols()), std::vector<double>(idx.size())};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto r = src.inputs.row(idx[i]);
        std::copy(r.begin(), r.end(), &out.inputs(i, 0));
        out.targets[i] = src.targets[idx[i]];
    }
    return out;
}

class MlpModel {
public:
    MlpModel() = default;

    /// Takes ownership of prebuilt layers; the last one is the task head.
    MlpModel(std::vector<Layer> layers, Head head) : layers_(std::move(layers)), head_(head) { validate(); }

    /// Random init: hidden weights ~ N(0, 1/fan_in), zero biases. Hidden weight
    /// blocks are maskable; biases and the head are not.
    static MlpModel create(std::size_t in_dim, const std::vector<std::size_t>& hidden, Activation act, Head head,
                           Rng& rng) {
        std::vector<Layer> layers;
        std::size_t fan_in = in_dim;
        for (std::size_t i = 0; i < hidden.size(); ++i) {
            const std::string prefix = "layer" + std::to_string(i);
            layers.push_back(make_layer(prefix, fan_in, hidden[i], act, true, rng));
            fan_in = hidden[i];
        }
        layers.push_back(make_layer("head", fan_in, head.out_dim(), Activation::identity, false, rng));
        return MlpModel(std::move(layers), head);
    }

    static Layer make_layer(const std::string& prefix, std::size_t in, std::size_t out, Activation act,
                            bool maskable_weight, Rng& rng) {
        if (in == 0 || out == 0) throw DimensionError("layer '" + prefix + "' has a zero dimension");
        Layer l;
        l.weight = ParamTensor(prefix + ".weight",
                               gaussian_init({in, out}, 0.0, 1.0 / std::sqrt(static_cast<double>(in)), rng),
                               maskable_weight);
        l.bias = ParamTensor(prefix + ".bias", Matrix(1, out), false);
        l.activation = act;
        return l;
    }

    [[nodiscard]] const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }
    [[nodiscard]] const Head& head() const noexcept { return head_; }
    [[nodiscard]] std::size_t in_dim() const { return layers_.front().weight.value.rows(); }
    [[nodiscard]] std::size_t out_dim() const { return layers_.back().weight.value.cols(); }

    /// Visits every parameter block in layer order (weight, then bias).
    template <typename F>
    void for_each_param(F&& f) {
        for (auto& l : layers_) {
            f(l.weight);
            f(l.bias);
        }
    }
    template <typename F>
    void for_each_param(F&& f) const {
        for (const auto& l : layers_) {
            f(l.weight);
            f(l.bias);
        }
    }

    std::vector<ParamTensor*> params() {
        std::vector<ParamTensor*> out;
        for_each_param([&](ParamTensor& p) { out.push_back(&p); });
        return out;
    }

    ParamTensor& param(const std::string& name) {
        for (auto& l : layers_) {
            if (l.weight.name == name) return l.weight;
            if (l.bias.name == name) return l.bias;
        }
        throw std::out_of_range("no parameter named '" + name + "'");
    }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_param([&](const ParamTensor& p) { n += p.value.size(); });
        return n;
    }

    void zero_grad() {
        for_each_param([](ParamTensor& p) { p.zero_grad(); });
    }

    friend bool operator==(const MlpModel& a, const MlpModel& b) {
        if (a.layers_.size() != b.layers_.size() || a.head_.kind != b.head_.kind ||
            a.head_.num_classes != b.head_.num_classes)
            return false;
        for (std::size_t i = 0; i < a.layers_.size(); ++i) {
            const auto &x = a.layers_[i], &y = b.layers_[i];
            if (x.activation != y.activation) return false;
            for (auto [p, q] : {std::pair{&x.weight, &y.weight}, std::pair{&x.bias, &y.bias}}) {
                if (p->name != q->name || p->value != q->value || p->pretrained != q->pretrained ||
                    p->maskable != q->maskable)
                    return false;
            }
        }
        return true;
    }

private:
    void validate() const {
        if (layers_.empty()) throw DimensionError("model needs at least one layer");
        std::set<std::string> names;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            for (const ParamTensor* p : {&l.weight, &l.bias}) {
                if (!names.insert(p->name).second) throw ConfigError("duplicate parameter name '" + p->name + "'");
                if (p->pretrained.shape() != p->value.shape() || p->grad.shape() != p->value.shape())
                    throw DimensionError("parameter '" + p->name + "' value/pretrained/grad shapes differ");
            }
            if (l.bias.value.rows() != 1 || l.bias.value.cols() != l.weight.value.cols())
                throw DimensionError("bias '" + l.bias.name + "' must be 1x" + std::to_string(l.weight.value.cols()));
            if (i + 1 < layers_.size() && l.weight.value.cols() != layers_[i + 1].weight.value.rows())
                throw DimensionError("layer " + std::to_string(i) + " output does not chain into layer " +
                                     std::to_string(i + 1));
        }
        if (layers_.back().weight.value.cols() != head_.out_dim())
            throw DimensionError("final layer width does not match head output dimension");
    }

    std::vector<Layer> layers_;
    Head head_{};
};

/// Intermediate values kept for the backward pass.
struct ForwardCache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    Matrix output;
};

namespace detail {

inline double activate(Activation a, double z) {
    switch (a) {
        case Activation::tanh: return std::tanh(z);
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::identity: return z;
    }
    return z;
}

// Derivative expressed through the pre-activation z and output y.
inline double activate_grad(Activation a, double z, double y) {
    switch (a) {
        case Activation::tanh: return 1.0 - y * y;
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

inline void check_targets(const Head& head, std::span<const double> targets, std::size_t rows) {
    if (targets.size() != rows) {
        throw DimensionError("batch has " + std::to_string(rows) + " rows but " + std::to_string(targets.size()) +
                             " targets");
    }
    if (rows == 0) throw DimensionError("empty batch");
    if (head.kind == HeadKind::classification) {
        for (double t : targets) {
            if (t < 0.0 || t != std::floor(t) || t >= static_cast<double>(head.num_classes))
                throw DomainError("class label " + std::to_string(t) + " outside [0, " +
                                  std::to_string(head.num_classes) + ")");
        }
    }
}

}  // namespace detail

inline ForwardCache forward_pass(const MlpModel& model, const Matrix& inputs) {
    if (inputs.cols() != model.in_dim()) {
        throw DimensionError("forward: input has " + std::to_string(inputs.cols()) + " columns, model expects " +
                             std::to_string(model.in_dim()));
    }
    ForwardCache cache;
    cache.inputs.reserve(model.layers().size());
    cache.pre.reserve(model.layers().size());
    Matrix x = inputs;
    for (const Layer& l : model.layers()) {
        Matrix z = matmul(x, l.weight.value);
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += l.bias.value[c];
        Matrix y(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) y[i] = detail::activate(l.activation, z[i]);
        cache.inputs.push_back(std::move(x));
        cache.pre.push_back(std::move(z));
        x = std::move(y);
    }
    cache.output = std::move(x);
    return cache;
}

/// Logits (classification) or scalar outputs (regression), one row per example.
inline Matrix forward(const MlpModel& model, const Matrix& inputs) { return forward_pass(model, inputs).output; }

/// Mean cross-entropy or mean squared error of `output` against `targets`.
/// When `dout` is given it receives dLoss/dOutput.
inline double head_loss(const Head& head, const Matrix& output, std::span<const double> targets,
                        Matrix* dout = nullptr) {
    detail::check_targets(head, targets, output.rows());
    const std::size_t n = output.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    if (dout) *dout = Matrix(output.shape());
    double total = 0.0;
    if (head.kind == HeadKind::regression) {
        for (std::size_t r = 0; r < n; ++r) {
            const double diff = output(r, 0) - targets[r];
            total += diff * diff;
            if (dout) (*dout)(r, 0) = 2.0 * diff * inv_n;
        }
    } else {
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = output.row(r);
            const double mx = *std::max_element(row.begin(), row.end());
            double sum = 0.0;
            for (double v : row) sum += std::exp(v - mx);
            const double lse = mx + std::log(sum);
            const auto label = static_cast<std::size_t>(targets[r]);
            total += lse - row[label];
            if (dout) {
                for (std::size_t c = 0; c < row.size(); ++c) {
                    const double prob = std::exp(row[c] - lse);
                    (*dout)(r, c) = (prob - (c == label ? 1.0 : 0.0)) * inv_n;
                }
            }
        }
    }
    const double loss = total * inv_n;
    if (!std::isfinite(loss)) throw NonFiniteError("loss is not finite");
    return loss;
}

/// Backpropagates through a cached forward pass and overwrites every grad.
inline double backward(MlpModel& model, const ForwardCache& cache, std::span<const double> targets) {
    Matrix delta;
    const double loss = head_loss(model.head(), cache.output, targets, &delta);
    auto& layers = model.layers();
    for (std::size_t li = layers.size(); li-- > 0;) {
        Layer& l = layers[li];
        const Matrix& z = cache.pre[li];
        const Matrix& y = li + 1 < layers.size() ? cache.inputs[li + 1] : cache.output;
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= detail::activate_grad(l.activation, z[i], y[i]);
        l.weight.grad = matmul_tn(cache.inputs[li], delta);
        l.bias.grad = Matrix(1, delta.cols());
        for (std::size_t r = 0; r < delta.rows(); ++r)
            for (std::size_t c = 0; c < delta.cols(); ++c) l.bias.grad[c] += delta(r, c);
        if (li > 0) delta = matmul_nt(delta, l.weight.value);
    }
    return loss;
}

/// Mean loss over the batch; exact analytic gradients are written into each
/// ParamTensor::grad.
inline double loss_and_grads(MlpModel& model, const Batch& batch) {
    detail::check_targets(model.head(), batch.targets, batch.inputs.rows());
    return backward(model, forward_pass(model, batch.inputs), batch.targets);
}

inline double loss_only(const MlpModel& model, const Batch& batch) {
    return head_loss(model.head(), forward(model, batch.inputs), batch.targets);
}

/// Row-wise argmax of logits, or the raw scalar for regression heads.
inline std::vector<double> predict(const MlpModel& model, const Matrix& inputs) {
    const Matrix out = forward(model, inputs);
    std::vector<double> preds(out.rows());
    for (std::size_t r = 0; r < out.rows(); ++r) {
        if (model.head().kind == HeadKind::regression) {
            preds[r] = out(r, 0);
        } else {
            const auto row = out.row(r);
            preds[r] = static_cast<double>(std::max_element(row.begin(), row.end()) - row.begin());
        }
    }
    return preds;
}

/// Copy whose pretrained snapshot equals its current values.
inline MlpModel clone_as_pretrained(const MlpModel& model) {
    MlpModel out = model;
    out.for_each_param([](ParamTensor& p) { p.pretrained = p.value; });
    return out;
}

/// Replaces the task head with a freshly initialized one for a new label space.
/// The fresh init doubles as the head's pretrained snapshot.
inline void reinit_head(MlpModel& model, Head head, Rng& rng) {
    auto layers = model.layers();
    const std::size_t in = layers.back().weight.value.rows();
    layers.back() = MlpModel::make_layer("head", in, head.out_dim(), Activation::identity, false, rng);
    model = MlpModel(std::move(layers), head);
}

}  // namespace subnet_tune
