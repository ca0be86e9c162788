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

// Importance accumulators and ranked subnetwork selection.
//
// Ranking is global over every maskable entry of the model. Entries are
// ordered by score (descending) and ties are broken by tensor name, then
// row-major index, both ascending. Exactly keep_count(p, N) entries are kept.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "subnet_tune/errors.hpp"
#include "subnet_tune/model.hpp"
#include "subnet_tune/tensor.hpp"

namespace subnet_tune {

/// Per-tensor matrices keyed (and therefore ordered) by parameter name.
using TensorMap = std::map<std::string, Matrix>;

inline TensorMap zeros_like_maskable(const MlpModel& model) {
    TensorMap out;
    model.for_each_param([&](const ParamTensor& p) {
        if (p.maskable) out.emplace(p.name, Matrix(p.shape()));
    });
    return out;
}

inline void zero_all(TensorMap& m) {
    for (auto& [_, v] : m) v.fill(0.0);
}

inline std::size_t total_entries(const TensorMap& m) {
    std::size_t n = 0;
    for (const auto& [_, v] : m) n += v.size();
    return n;
}

enum class MaskProvenance { bernoulli, ranked, fixed };

inline const char* to_string(MaskProvenance p) {
    switch (p) {
        case MaskProvenance::bernoulli: return "bernoulli";
        case MaskProvenance::ranked: return "ranked";
        case MaskProvenance::fixed: return "fixed";
    }
    return "?";
}

struct MaskSet {
    TensorMap masks;
    MaskProvenance provenance = MaskProvenance::ranked;

    [[nodiscard]] std::size_t ones() const {
        std::size_t n = 0;
        for (const auto& [_, m] : masks)
            for (double v : m.flat()) n += v != 0.0;
        return n;
    }
    [[nodiscard]] const Matrix* find(const std::string& name) const {
        auto it = masks.find(name);
        return it == masks.end() ? nullptr : &it->second;
    }
    [[nodiscard]] bool empty() const noexcept { return masks.empty(); }
};

/// Running sum of squared gradients (GAM).
struct GradAccumulator {
    TensorMap sums;

    static GradAccumulator for_model(const MlpModel& m) { return {zeros_like_maskable(m)}; }
    void reset() { zero_all(sums); }
    [[nodiscard]] bool empty() const { return total_entries(sums) == 0; }
};

/// Per-entry count of Stage I updates (FAM).
struct FreqAccumulator {
    TensorMap counts;

    static FreqAccumulator for_model(const MlpModel& m) { return {zeros_like_maskable(m)}; }
    void reset() { zero_all(counts); }
    [[nodiscard]] bool empty() const { return total_entries(counts) == 0; }
};

/// ceil((1 - p) * n). The 1e-9 slack absorbs representation error in p so
/// that e.g. p = 0.3, n = 10 keeps 7 rather than 8.
inline std::size_t keep_count(double p, std::size_t n) {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("drop fraction " + std::to_string(p) + " outside [0,1)");
    const double x = (1.0 - p) * static_cast<double>(n);
    const double k = std::ceil(x - 1e-9 * std::max(1.0, x));
    return std::min<std::size_t>(n, static_cast<std::size_t>(std::max(0.0, k)));
}

/// Keeps the top keep_count(p, N) entries of `scores` under the global
/// ordering described at the top of this file.
inline MaskSet select_top(const TensorMap& scores, double p) {
    const std::size_t n = total_entries(scores);
    if (n == 0) throw DomainError("cannot rank an empty accumulator");
    const std::size_t k = keep_count(p, n);

    std::vector<double> flat;
    flat.reserve(n);
    for (const auto& [_, m] : scores) flat.insert(flat.end(), m.flat().begin(), m.flat().end());

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    auto before = [&](std::uint32_t a, std::uint32_t b) { return flat[a] > flat[b] || (flat[a] == flat[b] && a < b); };
    if (k < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);

    std::vector<char> keep(n, 0);
    for (std::size_t i = 0; i < k; ++i) keep[order[i]] = 1;

    MaskSet out;
    out.provenance = MaskProvenance::ranked;
    std::size_t offset = 0;
    for (const auto& [name, m] : scores) {
        Matrix mask(m.shape());
        for (std::size_t i = 0; i < m.size(); ++i) mask[i] = keep[offset + i] ? 1.0 : 0.0;
        offset += m.size();
        out.masks.emplace(name, std::move(mask));
    }
    return out;
}

/// Top (1 - p) entries by accumulated squared gradient.
inline MaskSet ranked_mask_dense(const GradAccumulator& gam, double p) { return select_top(gam.sums, p); }

/// Stage lengths below this skip the frequency penalty.
inline constexpr std::size_t kPenaltyBoundary = 50;

/// Frequency-penalized importance: G/F, times exp(-F/us) unless the stage is
/// shorter than `boundary` steps. Entries never updated (F == 0) score 0.
inline double mix_score(double g, double f, std::size_t us, std::size_t boundary = kPenaltyBoundary) {
    if (f == 0.0) return 0.0;
    const double ratio = g / f;
    if (us < boundary) return ratio;
    return ratio * std::exp(-f / static_cast<double>(us));
}

inline TensorMap mix_scores(const GradAccumulator& gam, const FreqAccumulator& fam, std::size_t us,
                            std::size_t boundary = kPenaltyBoundary) {
    if (gam.sums.size() != fam.counts.size()) throw DimensionError("GAM and FAM cover different tensors");
    TensorMap out;
    for (const auto& [name, g] : gam.sums) {
        auto it = fam.counts.find(name);
        if (it == fam.counts.end()) throw DimensionError("FAM has no entry for '" + name + "'");
        require_same_shape(g, it->second, "mix_scores");
        Matrix s(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) s[i] = mix_score(g[i], it->second[i], us, boundary);
        out.emplace(name, std::move(s));
    }
    return out;
}

inline MaskSet ranked_mask_mix(const GradAccumulator& gam, const FreqAccumulator& fam, std::size_t us, double p,
                               std::size_t boundary = kPenaltyBoundary) {
    if (gam.empty() || fam.empty()) throw DomainError("cannot rank empty accumulators");
    return select_top(mix_scores(gam, fam, us, boundary), p);
}

// Debug dumps, keyed by tensor name.

inline nlohmann::json tensor_map_to_json(const TensorMap& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, v] : m) j[name] = {{"rows", v.rows()}, {"cols", v.cols()}, {"data", v.data()}};
    return j;
}

inline TensorMap tensor_map_from_json(const nlohmann::json& j) {
    TensorMap m;
    for (const auto& [name, v] : j.items())
        m.emplace(name, Matrix(v.at("rows").get<std::size_t>(), v.at("cols").get<std::size_t>(),
                               v.at("data").get<std::vector<double>>()));
    return m;
}

inline nlohmann::json mask_to_json(const MaskSet& m) {
    return {{"provenance", to_string(m.provenance)}, {"ones", m.ones()}, {"masks", tensor_map_to_json(m.masks)}};
}

inline MaskSet mask_from_json(const nlohmann::json& j) {
    MaskSet m;
    const auto prov = j.at("provenance").get<std::string>();
    m.provenance = prov == "bernoulli" ? MaskProvenance::bernoulli
                   : prov == "fixed"   ? MaskProvenance::fixed
                                       : MaskProvenance::ranked;
    m.masks = tensor_map_from_json(j.at("masks"));
    return m;
}

inline nlohmann::json accumulators_to_json(const GradAccumulator& gam, const FreqAccumulator* fam = nullptr) {
    nlohmann::json j{{"gam", tensor_map_to_json(gam.sums)}};
    if (fam) j["fam"] = tensor_map_to_json(fam->counts);
    return j;
}

}  // namespace subnet_tune
