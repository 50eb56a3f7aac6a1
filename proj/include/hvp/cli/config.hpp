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
#include <set>
#include <string>
#include <vector>

#include "hvp/container.hpp"
#include "hvp/errors.hpp"
#include "hvp/evalsuite.hpp"
#include "hvp/hvpmodel.hpp"
#include "hvp/synthviews.hpp"
#include "hvp/trainer.hpp"

namespace hvp::cli {

using io::json;

struct EvalConfig {
  double probe_l2 = 1e-3;
  std::size_t probe_iters = 500;
  std::size_t pr_points = eval::kDefaultPrPoints;
  std::uint64_t seed = 0;
};

struct AblateConfig {
  std::vector<std::string> tables{"loss", "direction", "aggregation"};
};

enum class TrainMode { known, unknown };

/// Resolved configuration of every command.
struct RunConfig {
  synth::DatasetConfig dataset;
  model::HvpConfig model;  // view_size always mirrors dataset.view_size
  train::TrainConfig train;
  TrainMode mode = TrainMode::known;
  EvalConfig eval;
  AblateConfig ablate;

  void validate() const {
    synth::validate(dataset);
    if (model.view_size != dataset.view_size)
      throw ConfigError("model view_size " + std::to_string(model.view_size) + " differs from dataset view_size " +
                        std::to_string(dataset.view_size));
    model.validate();
    train.validate();
    if (eval.pr_points < 2) throw ConfigError("eval.pr_points must be at least 2");
    if (eval.probe_iters == 0) throw ConfigError("eval.probe_iters must be positive");
    if (eval.probe_l2 < 0) throw ConfigError("eval.probe_l2 must be nonnegative");
    for (const auto& t : ablate.tables)
      if (t != "loss" && t != "direction" && t != "aggregation")
        throw ConfigError("unknown ablation table '" + t + "' (expected loss, direction or aggregation)");
  }

  /// Sets the dataset, training and probe seeds together.
  void apply_seed(std::uint64_t seed) {
    dataset.seed = seed;
    train.seed = seed;
    eval.seed = seed;
  }

  json to_json() const {
    const auto& m = train.loss_mask;
    return {{"dataset",
             {{"classes", dataset.classes},
              {"train_per_class", dataset.train_per_class},
              {"test_per_class", dataset.test_per_class},
              {"view_size", dataset.view_size},
              {"seed", dataset.seed}}},
            {"model",
             {{"feature_dim", model.feature_dim},
              {"patch_size", model.patch_size},
              {"phi_channels", model.phi_channels},
              {"gen_channels", model.gen_channels},
              {"gen_stride", model.gen_stride},
              {"abs_block_layers", model.abs_block_layers},
              {"abs_channels", model.abs_channels}}},
            {"train",
             {{"mode", mode == TrainMode::known ? "known" : "unknown"},
              {"epochs", train.epochs},
              {"pairs_per_step", train.pairs_per_step},
              {"epsilon", train.epsilon},
              {"net_lr", train.net_lr},
              {"alpha", train.alpha},
              {"beta", train.beta},
              {"direction", train::direction_name(train.direction)},
              {"loss_mask", {{"l_r", m.patch}, {"l_u", m.current}, {"l_u_prime", m.opposite}}},
              {"aggregation", train::aggregation_name(train.aggregation)},
              {"use_global_feature", train.use_global_feature},
              {"seed", train.seed}}},
            {"eval",
             {{"probe_l2", eval.probe_l2},
              {"probe_iters", eval.probe_iters},
              {"pr_points", eval.pr_points},
              {"seed", eval.seed}}},
            {"ablate", {{"tables", ablate.tables}}}};
  }
};

namespace detail {

/// Reads known keys of one object and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type: " + j_.at(key).dump());
    }
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key);
  }

  Section sub(const std::string& key) {
    known_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!known_.count(key)) throw ConfigError("unknown config key " + path_ + "." + key);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

}  // namespace detail

/// Defaults overlaid with `j`; unknown keys and type mismatches are errors.
inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  detail::Section root(j, "config");
  if (root.has("dataset")) {
    auto s = root.sub("dataset");
    s.get("classes", c.dataset.classes);
    s.get("train_per_class", c.dataset.train_per_class);
    s.get("test_per_class", c.dataset.test_per_class);
    s.get("view_size", c.dataset.view_size);
    s.get("seed", c.dataset.seed);
    s.finish();
  }
  if (root.has("model")) {
    auto s = root.sub("model");
    s.get("feature_dim", c.model.feature_dim);
    s.get("patch_size", c.model.patch_size);
    s.get("phi_channels", c.model.phi_channels);
    s.get("gen_channels", c.model.gen_channels);
    s.get("gen_stride", c.model.gen_stride);
    s.get("abs_block_layers", c.model.abs_block_layers);
    s.get("abs_channels", c.model.abs_channels);
    s.finish();
  }
  if (root.has("train")) {
    auto s = root.sub("train");
    std::string mode = "known", direction = "both", aggregation = "implicit_f";
    s.get("mode", mode);
    if (mode != "known" && mode != "unknown") throw ConfigError("train.mode must be known or unknown");
    c.mode = mode == "known" ? TrainMode::known : TrainMode::unknown;
    s.get("epochs", c.train.epochs);
    s.get("pairs_per_step", c.train.pairs_per_step);
    s.get("epsilon", c.train.epsilon);
    s.get("net_lr", c.train.net_lr);
    s.get("alpha", c.train.alpha);
    s.get("beta", c.train.beta);
    s.get("direction", direction);
    c.train.direction = train::parse_direction(direction);
    if (s.has("loss_mask")) {
      auto m = s.sub("loss_mask");
      m.get("l_r", c.train.loss_mask.patch);
      m.get("l_u", c.train.loss_mask.current);
      m.get("l_u_prime", c.train.loss_mask.opposite);
      m.finish();
    }
    s.get("aggregation", aggregation);
    c.train.aggregation = train::parse_aggregation(aggregation);
    s.get("use_global_feature", c.train.use_global_feature);
    s.get("seed", c.train.seed);
    s.finish();
  }
  if (root.has("eval")) {
    auto s = root.sub("eval");
    s.get("probe_l2", c.eval.probe_l2);
    s.get("probe_iters", c.eval.probe_iters);
    s.get("pr_points", c.eval.pr_points);
    s.get("seed", c.eval.seed);
    s.finish();
  }
  if (root.has("ablate")) {
    auto s = root.sub("ablate");
    s.get("tables", c.ablate.tables);
    s.finish();
  }
  root.finish();
  c.model.view_size = c.dataset.view_size;
  c.model.alpha = c.train.alpha;
  c.model.beta = c.train.beta;
  c.model.use_global_feature = c.train.use_global_feature;
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace hvp::cli
