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

// Synthetic tasks. A teacher task labels standard-normal inputs with a frozen
// random tanh network; tasks sharing feature_seed share the teacher's hidden
// layer and differ only in its output layer, which makes them related the
// way a pretraining task and a downstream task are. A covariate shift moves
// the input distribution but keeps the labeling function.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "subnet_tune/errors.hpp"
#include "subnet_tune/model.hpp"
#include "subnet_tune/rng.hpp"

namespace subnet_tune {

enum class GeneratorKind { teacher, gaussian_mixture };

struct CovariateShift {
    double mean_offset = 0.0;  // Euclidean length of the offset, spread over all coordinates
    double rotation = 0.0;     // radians, in the plane of the first two coordinates

    [[nodiscard]] bool is_identity() const noexcept { return mean_offset == 0.0 && rotation == 0.0; }
};

struct TaskSpec {
    std::string name = "task";
    Head head = Head::classification(2);
    GeneratorKind generator = GeneratorKind::teacher;
    std::size_t input_dim = 8;
    std::size_t teacher_hidden = 16;
    std::uint64_t feature_seed = 1;
    std::uint64_t head_seed = 2;
    double teacher_scale = 3.0;  // sharpness of the teacher's output layer
    double label_noise = 0.0;    // classification: flip probability; regression: noise std
    double separation = 4.0;     // gaussian mixture: distance between class means, in cluster stds
    CovariateShift shift;

    void validate() const {
        if (input_dim == 0) throw ConfigError("task '" + name + "': input_dim must be positive");
        if (head.kind == HeadKind::classification && head.num_classes < 2)
            throw ConfigError("task '" + name + "': classification needs at least 2 classes");
        if (generator == GeneratorKind::gaussian_mixture) {
            if (head.kind != HeadKind::classification)
                throw ConfigError("task '" + name + "': gaussian mixture only generates classification data");
            if (!shift.is_identity())
                throw ConfigError("task '" + name + "': covariate shift requires a teacher generator");
        } else if (teacher_hidden == 0) {
            throw ConfigError("task '" + name + "': teacher_hidden must be positive");
        }
        if (shift.rotation != 0.0 && input_dim < 2) throw ConfigError("task '" + name + "': rotation needs 2+ dims");
        if (label_noise < 0.0 || (head.kind == HeadKind::classification && label_noise > 1.0))
            throw ConfigError("task '" + name + "': label_noise out of range");
    }

    /// Same labeling function, shifted inputs.
    [[nodiscard]] TaskSpec shifted(CovariateShift s) const {
        TaskSpec out = *this;
        out.shift = s;
        out.name = name + "-ood";
        return out;
    }
};

/// The frozen labeling network of a teacher task. Classification logits are
/// centred per class over a calibration sample so labels are not dominated
/// by one class.
inline MlpModel teacher_network(const TaskSpec& spec) {
    Rng feat(spec.feature_seed);
    Rng head(spec.head_seed);
    std::vector<Layer> layers;
    layers.push_back(MlpModel::make_layer("teacher0", spec.input_dim, spec.teacher_hidden, Activation::tanh, false, feat));
    Layer out = MlpModel::make_layer("teacher_out", spec.teacher_hidden, spec.head.out_dim(), Activation::identity,
                                     false, head);
    for (double& w : out.weight.value.flat()) w *= spec.teacher_scale;
    layers.push_back(std::move(out));
    MlpModel net(std::move(layers), spec.head);

    if (spec.head.kind == HeadKind::classification) {
        Rng calib = head.derive("calibration");
        const Matrix logits = forward(net, gaussian_init({2048, spec.input_dim}, 0.0, 1.0, calib));
        Matrix& bias = net.layers().back().bias.value;
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            double mean = 0.0;
            for (std::size_t r = 0; r < logits.rows(); ++r) mean += logits(r, c);
            bias[c] = -mean / static_cast<double>(logits.rows());
        }
    }
    return net;
}

namespace detail {

inline void apply_shift(Matrix& x, const CovariateShift& s) {
    if (s.is_identity()) return;
    const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
    const double per_dim = s.mean_offset / std::sqrt(static_cast<double>(x.cols()));
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (s.rotation != 0.0) {
            const double a = x(r, 0), b = x(r, 1);
            x(r, 0) = c * a - sn * b;
            x(r, 1) = sn * a + c * b;
        }
        for (std::size_t j = 0; j < x.cols(); ++j) x(r, j) += per_dim;
    }
}

/// Class means for the gaussian mixture; two classes sit antipodally.
inline Matrix mixture_means(const TaskSpec& spec) {
    Rng rng(spec.feature_seed);
    const std::size_t k = spec.head.num_classes, d = spec.input_dim;
    Matrix means(k, d);
    for (std::size_t c = 0; c < k; ++c) {
        if (k == 2 && c == 1) {
            for (std::size_t j = 0; j < d; ++j) means(1, j) = -means(0, j);
            break;
        }
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            means(c, j) = rng.normal(0.0, 1.0);
            norm += means(c, j) * means(c, j);
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) means(c, j) *= 0.5 * spec.separation / norm;
    }
    return means;
}

}  // namespace detail

/// n i.i.d. samples of the task. Inputs and noise come from `rng`; the
/// labeling function depends only on the spec's seeds.
inline Dataset generate_task(const TaskSpec& spec, std::size_t n, Rng& rng) {
    spec.validate();
    if (n == 0) throw ConfigError("generate_task: n must be at least 1");
    Dataset out{Matrix(n, spec.input_dim), std::vector<double>(n)};

    if (spec.generator == GeneratorKind::gaussian_mixture) {
        const Matrix means = detail::mixture_means(spec);
        for (std::size_t r = 0; r < n; ++r) {
            const auto c = rng.below(spec.head.num_classes);
            for (std::size_t j = 0; j < spec.input_dim; ++j) out.inputs(r, j) = means(c, j) + rng.normal(0.0, 1.0);
            out.targets[r] = static_cast<double>(c);
        }
        return out;
    }

    out.inputs = gaussian_init({n, spec.input_dim}, 0.0, 1.0, rng);
    detail::apply_shift(out.inputs, spec.shift);
    const MlpModel teacher = teacher_network(spec);
    out.targets = predict(teacher, out.inputs);
    if (spec.label_noise > 0.0) {
        for (double& t : out.targets) {
            if (spec.head.kind == HeadKind::regression) {
                t += rng.normal(0.0, spec.label_noise);
            } else if (rng.uniform() < spec.label_noise) {
                t = static_cast<double>(rng.below(spec.head.num_classes));
            }
        }
    }
    return out;
}

}  // namespace subnet_tune
