// Copyright 2026 The HVP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hvp/container.hpp"
#include "hvp/errors.hpp"
#include "hvp/hvpmodel.hpp"

namespace hvp::io {

inline constexpr const char* kWeightsFormat = "hvp-weights";

inline json model_config_to_json(const model::HvpConfig& c) {
  return {{"feature_dim", c.feature_dim},   {"view_size", c.view_size},
          {"patch_size", c.patch_size},     {"channels", c.channels},
          {"phi_channels", c.phi_channels}, {"gen_channels", c.gen_channels},
          {"gen_stride", c.gen_stride},     {"abs_block_layers", c.abs_block_layers},
          {"abs_channels", c.abs_channels}, {"alpha", c.alpha},
          {"beta", c.beta},                 {"use_global_feature", c.use_global_feature}};
}

inline model::HvpConfig model_config_from_json(const json& j) {
  model::HvpConfig c;
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.view_size = j.at("view_size").get<std::size_t>();
  c.patch_size = j.at("patch_size").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.phi_channels = j.at("phi_channels").get<std::vector<std::size_t>>();
  c.gen_channels = j.at("gen_channels").get<std::size_t>();
  c.gen_stride = j.at("gen_stride").get<std::size_t>();
  c.abs_block_layers = j.at("abs_block_layers").get<std::vector<std::size_t>>();
  c.abs_channels = j.at("abs_channels").get<std::vector<std::size_t>>();
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.use_global_feature = j.at("use_global_feature").get<bool>();
  return c;
}

/// Manifest: model config + ordered (name, shape, frozen) list; payload:
/// every parameter's float32 values in that order. `extra` is stored under
/// "run" for provenance.
inline std::string encode_weights(const model::HvpParams<float>& p, const json& extra = json::object()) {
  json params = json::array();
  std::vector<float> payload;
  for (const auto& named : p.all()) {
    params.push_back({{"name", named.name}, {"shape", named.tensor.shape()}, {"frozen", !named.tensor.requires_grad()}});
    payload.insert(payload.end(), named.tensor.data().begin(), named.tensor.data().end());
  }
  const json manifest{{"format", kWeightsFormat}, {"version", 1},       {"dtype", "float32"},
                      {"model", model_config_to_json(p.config)}, {"params", params}, {"run", extra}};
  return encode_container(manifest, payload);
}

inline void save_weights(const model::HvpParams<float>& p, const std::filesystem::path& path,
                         const json& extra = json::object()) {
  write_file(path, encode_weights(p, extra));
}

inline model::HvpParams<float> load_weights(const std::filesystem::path& path) {
  const std::string origin = path.string();
  const auto c = read_container(path);
  const auto& m = c.manifest;
  try {
    if (m.at("format") != kWeightsFormat) throw IoError(origin + ": not a weight container");
    if (m.at("dtype") != "float32") throw IoError(origin + ": unsupported dtype " + m.at("dtype").dump());
    model::HvpConfig cfg;
    try {
      cfg = model_config_from_json(m.at("model"));
      cfg.validate();
    } catch (const ConfigError& e) {
      throw IoError(origin + ": stored model config is invalid: " + e.what());
    }
    auto p = model::HvpParams<float>::skeleton(cfg);
    const auto group = p.all();
    const auto& listed = m.at("params");
    if (listed.size() != group.size())
      throw IoError(origin + ": manifest lists " + std::to_string(listed.size()) + " parameters, model has " +
                    std::to_string(group.size()));
    std::size_t offset = 0;
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto name = listed[i].at("name").get<std::string>();
      const auto shape = listed[i].at("shape").get<ad::Shape>();
      if (name != group[i].name || shape != group[i].tensor.shape())
        throw IoError(origin + ": parameter " + std::to_string(i) + " is " + name + " " + ad::to_string(shape) +
                      ", expected " + group[i].name + " " + ad::to_string(group[i].tensor.shape()));
      auto t = group[i].tensor;
      if (offset + t.size() > c.payload.size()) throw IoError(origin + ": payload truncated at " + name);
      std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.mutable_data().begin());
      t.set_requires_grad(!listed[i].at("frozen").get<bool>());
      offset += t.size();
    }
    if (offset != c.payload.size())
      throw IoError(origin + ": payload has " + std::to_string(c.payload.size() - offset) + " trailing values");
    return p;
  } catch (const json::exception& e) {
    throw IoError(origin + ": malformed weight manifest: " + e.what());
  }
}

}  // namespace hvp::io
