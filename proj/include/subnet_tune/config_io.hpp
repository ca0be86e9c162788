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

// JSON form of ExperimentConfig. Parsing is strict: unknown keys and
// ill-typed values are ConfigErrors naming the offending path. Missing keys
// take the struct defaults, and config_to_json writes every field back out
// so a manifest records the fully resolved experiment.

#pragma once

#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "subnet_tune/experiment.hpp"

namespace subnet_tune {

namespace detail {

/// Parsed text yields unsigned values, but json built in code stores
/// literals as signed; both are accepted when non-negative.
inline bool is_non_negative_integer(const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class ObjectReader {
public:
    ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        const auto& v = j_.at(key);
        const std::string where = path_ + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!is_non_negative_integer(v)) throw ConfigError(where + ": expected a non-negative integer");
        } else if constexpr (std::is_arithmetic_v<T>) {
            if (!v.is_number()) throw ConfigError(where + ": expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where + ": expected a string");
        }
        try {
            out = v.get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }

    /// Reads an enum through its from_string function.
    template <class T, class F>
    void get_enum(const char* key, T& out, F&& from_string) {
        std::string s;
        get(key, s);
        if (j_.contains(key)) {
            try {
                out = from_string(s);
            } catch (const ConfigError& e) {
                throw ConfigError(path_ + "." + key + ": " + e.what());
            }
        }
    }

    const nlohmann::json* sub(const char* key) {
        if (!j_.contains(key)) return nullptr;
        used_.insert(key);
        return &j_.at(key);
    }

    [[nodiscard]] std::string path(const char* key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!used_.count(k)) throw ConfigError("unknown key '" + path_ + "." + k + "'");
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> used_;
};

inline HeadKind head_kind_from_string(const std::string& s) {
    if (s == "classification") return HeadKind::classification;
    if (s == "regression") return HeadKind::regression;
    throw ConfigError("unknown head '" + s + "'");
}

inline GeneratorKind generator_from_string(const std::string& s) {
    if (s == "teacher") return GeneratorKind::teacher;
    if (s == "gaussian_mixture") return GeneratorKind::gaussian_mixture;
    throw ConfigError("unknown generator '" + s + "'");
}

inline const char* to_string(GeneratorKind g) { return g == GeneratorKind::teacher ? "teacher" : "gaussian_mixture"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adamw") return OptimizerKind::adamw;
    throw ConfigError("unknown optimizer '" + s + "'");
}

inline LrSchedule schedule_from_string(const std::string& s) {
    if (s == "linear") return LrSchedule::linear;
    if (s == "constant") return LrSchedule::constant;
    throw ConfigError("unknown lr schedule '" + s + "'");
}

inline AccumulationMode accumulation_from_string(const std::string& s) {
    if (s == "squared") return AccumulationMode::squared;
    if (s == "raw") return AccumulationMode::raw;
    throw ConfigError("unknown accumulation mode '" + s + "'");
}

}  // namespace detail

inline CovariateShift shift_from_json(const nlohmann::json& j, const std::string& path) {
    detail::ObjectReader r(j, path);
    CovariateShift s;
    r.get("mean_offset", s.mean_offset);
    r.get("rotation", s.rotation);
    r.finish();
    return s;
}

inline nlohmann::json shift_to_json(const CovariateShift& s) {
    return {{"mean_offset", s.mean_offset}, {"rotation", s.rotation}};
}

inline TaskSpec task_from_json(const nlohmann::json& j, const std::string& path) {
    detail::ObjectReader r(j, path);
    TaskSpec t;
    r.get("name", t.name);
    HeadKind kind = t.head.kind;
    std::size_t classes = t.head.num_classes;
    r.get_enum("head", kind, detail::head_kind_from_string);
    r.get("classes", classes);
    t.head = kind == HeadKind::regression ? Head::regression() : Head::classification(classes);
    r.get_enum("generator", t.generator, detail::generator_from_string);
    r.get("input_dim", t.input_dim);
    r.get("teacher_hidden", t.teacher_hidden);
    r.get("feature_seed", t.feature_seed);
    r.get("head_seed", t.head_seed);
    r.get("teacher_scale", t.teacher_scale);
    r.get("label_noise", t.label_noise);
    r.get("separation", t.separation);
    if (const auto* s = r.sub("shift")) t.shift = shift_from_json(*s, r.path("shift"));
    r.finish();
    return t;
}

inline nlohmann::json task_to_json(const TaskSpec& t) {
    nlohmann::json j{{"name", t.name},
                     {"head", t.head.kind == HeadKind::regression ? "regression" : "classification"},
                     {"generator", detail::to_string(t.generator)},
                     {"input_dim", t.input_dim},
                     {"teacher_hidden", t.teacher_hidden},
                     {"feature_seed", t.feature_seed},
                     {"head_seed", t.head_seed},
                     {"teacher_scale", t.teacher_scale},
                     {"label_noise", t.label_noise},
                     {"separation", t.separation},
                     {"shift", shift_to_json(t.shift)}};
    if (t.head.kind == HeadKind::classification) j["classes"] = t.head.num_classes;
    return j;
}

/// `clip_norm: null` (or absent) disables clipping.
inline OptimizerConfig optimizer_from_json(const nlohmann::json& j, const std::string& path, OptimizerConfig o = {}) {
    detail::ObjectReader r(j, path);
    r.get_enum("kind", o.kind, detail::optimizer_from_string);
    r.get("lr", o.lr);
    r.get("weight_decay", o.weight_decay);
    r.get("beta1", o.beta1);
    r.get("beta2", o.beta2);
    r.get("eps", o.eps);
    if (const auto* c = r.sub("clip_norm"); c && !c->is_null()) {
        if (!c->is_number()) throw ConfigError(r.path("clip_norm") + ": expected a number or null");
        o.clip_norm = c->get<double>();
    }
    r.get("warmup_fraction", o.warmup_fraction);
    r.get_enum("schedule", o.schedule, detail::schedule_from_string);
    r.finish();
    try {
        o.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return o;
}

inline nlohmann::json optimizer_to_json(const OptimizerConfig& o) {
    nlohmann::json j{{"kind", o.kind == OptimizerKind::sgd ? "sgd" : "adamw"},
                     {"lr", o.lr},
                     {"weight_decay", o.weight_decay},
                     {"beta1", o.beta1},
                     {"beta2", o.beta2},
                     {"eps", o.eps},
                     {"warmup_fraction", o.warmup_fraction},
                     {"schedule", o.schedule == LrSchedule::linear ? "linear" : "constant"}};
    j["clip_norm"] = std::isfinite(o.clip_norm) ? nlohmann::json(o.clip_norm) : nlohmann::json(nullptr);
    return j;
}

inline StrategyConfig strategy_from_json(const nlohmann::json& j, const std::string& path) {
    if (j.is_string()) {
        StrategyConfig s;
        s.kind = strategy_kind_from_string(j.get<std::string>());
        return s;
    }
    detail::ObjectReader r(j, path);
    StrategyConfig s;
    r.get_enum("kind", s.kind, strategy_kind_from_string);
    r.get("p", s.p);
    r.get("ur", s.ur);
    r.get("penalty_boundary", s.penalty_boundary);
    r.get_enum("accumulation", s.accumulation, detail::accumulation_from_string);
    r.get("label", s.label);
    r.finish();
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return s;
}

inline nlohmann::json strategy_to_json(const StrategyConfig& s) {
    nlohmann::json j{{"kind", to_string(s.kind)}, {"p", s.p}, {"label", s.label}};
    if (s.uses_schedule()) {
        j["ur"] = s.ur;
        j["accumulation"] = s.accumulation == AccumulationMode::squared ? "squared" : "raw";
        if (s.kind == StrategyKind::dps_mix) j["penalty_boundary"] = s.penalty_boundary;
    }
    return j;
}

/// `seeds` is either an explicit list or {"count": n, "start": s}.
inline std::vector<std::uint64_t> seeds_from_json(const nlohmann::json& j, const std::string& path) {
    std::vector<std::uint64_t> out;
    if (j.is_array()) {
        for (const auto& v : j) {
            if (!detail::is_non_negative_integer(v)) throw ConfigError(path + ": seeds must be non-negative integers");
            out.push_back(v.get<std::uint64_t>());
        }
    } else {
        detail::ObjectReader r(j, path);
        std::size_t count = 10;
        std::uint64_t start = 0;
        r.get("count", count);
        r.get("start", start);
        r.finish();
        for (std::size_t i = 0; i < count; ++i) out.push_back(start + i);
    }
    std::set<std::uint64_t> uniq(out.begin(), out.end());
    if (uniq.size() != out.size()) throw ConfigError(path + ": duplicate seed");
    return out;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    // The default lineup: one of each strategy, ten seeds.
    c.seeds.clear();
    detail::ObjectReader r(j, "config");
    r.get("name", c.name);
    if (const auto* m = r.sub("model")) {
        detail::ObjectReader mr(*m, "config.model");
        mr.get("hidden", c.model.hidden);
        mr.get_enum("activation", c.model.activation, activation_from_string);
        mr.finish();
        if (c.model.hidden.empty()) throw ConfigError("config.model.hidden: needs at least one hidden layer");
        for (auto h : c.model.hidden)
            if (h == 0) throw ConfigError("config.model.hidden: layer widths must be positive");
    }
    if (const auto* p = r.sub("pretrain")) {
        detail::ObjectReader pr(*p, "config.pretrain");
        if (const auto* t = pr.sub("task")) c.pretrain.task = task_from_json(*t, "config.pretrain.task");
        pr.get("samples", c.pretrain.samples);
        pr.get("epochs", c.pretrain.epochs);
        pr.get("batch_size", c.pretrain.batch_size);
        pr.get("seed", c.pretrain.seed);
        if (const auto* o = pr.sub("optimizer"))
            c.pretrain.optimizer = optimizer_from_json(*o, "config.pretrain.optimizer");
        pr.finish();
    }
    if (const auto* f = r.sub("finetune")) {
        detail::ObjectReader fr(*f, "config.finetune");
        if (const auto* ts = fr.sub("tasks")) {
            if (!ts->is_array()) throw ConfigError("config.finetune.tasks: expected an array");
            for (std::size_t i = 0; i < ts->size(); ++i)
                c.finetune.tasks.push_back(task_from_json((*ts)[i], "config.finetune.tasks[" + std::to_string(i) + "]"));
        }
        fr.get("sizes", c.finetune.sizes);
        fr.get("pool", c.finetune.pool);
        fr.get("eval_samples", c.finetune.eval_samples);
        fr.get("epochs", c.finetune.epochs);
        fr.get("batch_size", c.finetune.batch_size);
        fr.get("data_seed", c.finetune.data_seed);
        if (const auto* o = fr.sub("optimizer"))
            c.finetune.optimizer = optimizer_from_json(*o, "config.finetune.optimizer");
        if (const auto* s = fr.sub("ood_shift")) c.finetune.ood_shift = shift_from_json(*s, "config.finetune.ood_shift");
        fr.finish();
    }
    if (c.finetune.batch_size == 0 || c.pretrain.batch_size == 0)
        throw ConfigError("config: batch_size must be positive");
    if (const auto* s = r.sub("strategies")) {
        if (!s->is_array()) throw ConfigError("config.strategies: expected an array");
        for (std::size_t i = 0; i < s->size(); ++i)
            c.strategies.push_back(strategy_from_json((*s)[i], "config.strategies[" + std::to_string(i) + "]"));
    }
    if (const auto* s = r.sub("seeds")) c.seeds = seeds_from_json(*s, "config.seeds");
    else
        for (std::uint64_t i = 0; i < 10; ++i) c.seeds.push_back(i);
    if (const auto* m = r.sub("metrics")) {
        if (!m->is_array()) throw ConfigError("config.metrics: expected an array");
        c.metrics.clear();
        for (const auto& v : *m) {
            if (!v.is_string()) throw ConfigError("config.metrics: expected metric names");
            c.metrics.push_back(metric_from_string(v.get<std::string>()));
        }
    }
    r.finish();
    c.validate();
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json strategies = nlohmann::json::array();
    for (const auto& s : c.strategies) strategies.push_back(strategy_to_json(s));
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : c.finetune.tasks) tasks.push_back(task_to_json(t));
    nlohmann::json metrics = nlohmann::json::array();
    for (Metric m : c.metrics) metrics.push_back(to_string(m));
    return {
        {"name", c.name},
        {"model", {{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}}},
        {"pretrain",
         {{"task", task_to_json(c.pretrain.task)},
          {"samples", c.pretrain.samples},
          {"epochs", c.pretrain.epochs},
          {"batch_size", c.pretrain.batch_size},
          {"seed", c.pretrain.seed},
          {"optimizer", optimizer_to_json(c.pretrain.optimizer)}}},
        {"finetune",
         {{"tasks", tasks},
          {"sizes", c.finetune.sizes},
          {"pool", c.finetune.pool},
          {"eval_samples", c.finetune.eval_samples},
          {"epochs", c.finetune.epochs},
          {"batch_size", c.finetune.batch_size},
          {"data_seed", c.finetune.data_seed},
          {"optimizer", optimizer_to_json(c.finetune.optimizer)},
          {"ood_shift", shift_to_json(c.finetune.ood_shift)}}},
        {"strategies", strategies},
        {"seeds", c.seeds},
        {"metrics", metrics},
    };
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    try {
        return config_from_json(read_json_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace subnet_tune
