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

// JSON model checkpoints. Doubles are written with 17 significant digits so a
// save/load cycle is value-exact.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "subnet_tune/model.hpp"

namespace subnet_tune {

inline nlohmann::json matrix_to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
}

namespace detail {

inline nlohmann::json param_to_json(const ParamTensor& p) {
    return {{"name", p.name},
            {"rows", p.value.rows()},
            {"cols", p.value.cols()},
            {"maskable", p.maskable},
            {"value", p.value.data()},
            {"pretrained", p.pretrained.data()}};
}

inline ParamTensor param_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    ParamTensor p(j.at("name").get<std::string>(), Matrix(rows, cols, j.at("value").get<std::vector<double>>()),
                  j.at("maskable").get<bool>());
    p.pretrained = Matrix(rows, cols, j.at("pretrained").get<std::vector<double>>());
    return p;
}

}  // namespace detail

inline nlohmann::json model_to_json(const MlpModel& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& l : model.layers()) {
        layers.push_back({{"activation", to_string(l.activation)},
                          {"weight", detail::param_to_json(l.weight)},
                          {"bias", detail::param_to_json(l.bias)}});
    }
    const Head& h = model.head();
    return {{"format", "subnet-tune-model"},
            {"version", 1},
            {"head",
             {{"kind", h.kind == HeadKind::regression ? "regression" : "classification"},
              {"num_classes", h.num_classes}}},
            {"layers", layers}};
}

inline MlpModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "subnet-tune-model") throw ConfigError("not a subnet-tune model checkpoint");
        const auto& hj = j.at("head");
        const std::string kind = hj.at("kind").get<std::string>();
        Head head = kind == "regression" ? Head::regression()
                                         : Head::classification(hj.at("num_classes").get<std::size_t>());
        std::vector<Layer> layers;
        for (const auto& lj : j.at("layers")) {
            Layer l;
            l.activation = activation_from_string(lj.at("activation").get<std::string>());
            l.weight = detail::param_from_json(lj.at("weight"));
            l.bias = detail::param_from_json(lj.at("bias"));
            layers.push_back(std::move(l));
        }
        return MlpModel(std::move(layers), head);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model checkpoint: ") + e.what());
    }
}

inline void save_model(const MlpModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << model_to_json(model).dump(1) << '\n';
}

inline MlpModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    return model_from_json(nlohmann::json::parse(in));
}

}  // namespace subnet_tune
