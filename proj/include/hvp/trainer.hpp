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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hvp/container.hpp"
#include "hvp/errors.hpp"
#include "hvp/featstore.hpp"
#include "hvp/hvpmodel.hpp"
#include "hvp/synthviews.hpp"
#include "hvp/tensorcore.hpp"
#include "hvp/weights.hpp"

namespace hvp::train {

inline constexpr const char* kCodeVersion = "hvp-0.1.0";

enum class DirectionMode { both, o2i, i2o, random_one };
enum class Aggregation { implicit_f, mean_pool, max_pool };

inline const char* direction_name(DirectionMode d) {
  switch (d) {
    case DirectionMode::both: return "both";
    case DirectionMode::o2i: return "o2i";
    case DirectionMode::i2o: return "i2o";
    case DirectionMode::random_one: return "random_one";
  }
  return "?";
}

inline const char* aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::implicit_f: return "implicit_f";
    case Aggregation::mean_pool: return "mean_pool";
    case Aggregation::max_pool: return "max_pool";
  }
  return "?";
}

inline DirectionMode parse_direction(const std::string& s) {
  for (auto d : {DirectionMode::both, DirectionMode::o2i, DirectionMode::i2o, DirectionMode::random_one})
    if (s == direction_name(d)) return d;
  throw ConfigError("unknown direction mode '" + s + "' (expected both, o2i, i2o or random_one)");
}

inline Aggregation parse_aggregation(const std::string& s) {
  for (auto a : {Aggregation::implicit_f, Aggregation::mean_pool, Aggregation::max_pool})
    if (s == aggregation_name(a)) return a;
  throw ConfigError("unknown aggregation '" + s + "' (expected implicit_f, mean_pool or max_pool)");
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t pairs_per_step = 1;
  double epsilon = feat::kDefaultEpsilon;  // F learning rate
  double net_lr = 2e-4;                    // Adam learning rate for E, R, U, C
  double alpha = 1.0;
  double beta = 1.0;
  DirectionMode direction = DirectionMode::both;
  model::LossMask loss_mask;
  Aggregation aggregation = Aggregation::implicit_f;
  bool use_global_feature = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (pairs_per_step == 0) throw ConfigError("pairs_per_step must be at least 1");
    if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and nonnegative");
    if (!(net_lr > 0) || !std::isfinite(net_lr)) throw ConfigError("net_lr must be positive");
    if (alpha < 0 || beta < 0) throw ConfigError("alpha and beta must be nonnegative");
    const auto& m = loss_mask;
    if (!m.patch && !m.current && !m.opposite) throw ConfigError("loss_mask must enable at least one loss");
    if (m.opposite && !m.current)
      throw ConfigError("loss_mask: the opposite-view loss requires the current-view loss");
    if (aggregation == Aggregation::implicit_f && !use_global_feature)
      throw ConfigError("implicit_f aggregation requires use_global_feature");
  }

  /// Training-relevant fields only (aggregation affects evaluation, not training).
  io::json training_json() const {
    return {{"epochs", epochs},
            {"pairs_per_step", pairs_per_step},
            {"epsilon", epsilon},
            {"net_lr", net_lr},
            {"alpha", alpha},
            {"beta", beta},
            {"direction", direction_name(direction)},
            {"loss_mask", {{"l_r", loss_mask.patch}, {"l_u", loss_mask.current}, {"l_u_prime", loss_mask.opposite}}},
            {"use_global_feature", use_global_feature},
            {"seed", seed}};
  }

  io::json to_json() const {
    auto j = training_json();
    j["aggregation"] = aggregation_name(aggregation);
    return j;
  }
};

/// Hash of (model config, training config, dataset identity, code version).
inline std::string config_hash(const model::HvpConfig& m, const TrainConfig& t, const std::string& dataset_id,
                               const std::string& mode) {
  const io::json j{{"model", io::model_config_to_json(m)},
                   {"train", t.training_json()},
                   {"dataset", dataset_id},
                   {"mode", mode},
                   {"code", kCodeVersion}};
  const std::string text = j.dump();
  return io::hex64(io::fnv1a(text));
}

/// Identity of an in-memory shape list: FNV over ids and pixel bytes.
inline std::string shapes_fingerprint(const std::vector<synth::ShapeViews>& shapes) {
  std::uint64_t h = io::fnv1a(std::string("shapes"));
  for (const auto& s : shapes) {
    h = io::fnv1a(std::span<const char>(reinterpret_cast<const char*>(&s.shape_id), sizeof(s.shape_id)), h);
    h = io::fnv1a(std::span<const char>(reinterpret_cast<const char*>(s.pixels.data()), s.pixels.size() * 4), h);
  }
  return io::hex64(h);
}

struct LossRow {
  std::size_t step = 0;
  double l_r = 0, l_u = 0, l_u_prime = 0, total = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double l_r = 0, l_u = 0, l_u_prime = 0, total = 0;  // means over the epoch's steps
};

struct RunRecord {
  std::string mode;
  std::string config_hash;
  io::json config;
  std::vector<EpochStats> epochs;
  std::vector<LossRow> losses;
  double wall_seconds = 0;
  io::json metrics = io::json::object();

  std::size_t steps() const { return losses.size(); }

  /// step,l_r,l_u,l_u_prime,total with shortest round-trip float formatting.
  std::string loss_csv() const {
    std::ostringstream os;
    os << "step,l_r,l_u,l_u_prime,total\n";
    for (const auto& r : losses) {
      os << r.step << ',' << io::json(r.l_r).dump() << ',' << io::json(r.l_u).dump() << ','
         << io::json(r.l_u_prime).dump() << ',' << io::json(r.total).dump() << '\n';
    }
    return os.str();
  }

  io::json to_json() const {
    io::json ep = io::json::array();
    for (const auto& e : epochs)
      ep.push_back({{"epoch", e.epoch},
                    {"steps", e.steps},
                    {"l_r", e.l_r},
                    {"l_u", e.l_u},
                    {"l_u_prime", e.l_u_prime},
                    {"total", e.total}});
    return {{"mode", mode},
            {"config_hash", config_hash},
            {"config", config},
            {"steps", steps()},
            {"epochs", ep},
            {"wall_seconds", wall_seconds},
            {"metrics", metrics}};
  }
};

using EpochCallback = std::function<void(const EpochStats&)>;

struct TrainResult {
  model::HvpParams<float> params;
  feat::FeatureTable table;
  RunRecord record;
};

namespace detail {

struct Item {
  std::size_t shape;  // index into the shape list
  std::size_t pair;   // current view index
};

inline std::vector<Item> epoch_order(std::size_t n_shapes, std::uint64_t seed, std::size_t epoch) {
  std::vector<Item> order;
  order.reserve(n_shapes * synth::kViews);
  for (std::size_t s = 0; s < n_shapes; ++s)
    for (std::size_t p = 0; p < synth::kViews; ++p) order.push_back({s, p});
  std::mt19937_64 rng(synth::splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1))));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline model::Directions resolve(DirectionMode mode, std::uint64_t seed, std::size_t step) {
  switch (mode) {
    case DirectionMode::both: return {true, true};
    case DirectionMode::i2o: return {true, false};
    case DirectionMode::o2i: return {false, true};
    case DirectionMode::random_one: {
      const bool i2o = (synth::splitmix64(seed ^ 0x52414e444f4d31ULL ^ (step * 0x100000001b3ULL)) & 1u) != 0;
      return {i2o, !i2o};
    }
  }
  return {true, true};
}

/// Φ features and images for every (shape, pair), computed once.
inline std::vector<std::vector<model::PreparedPair<float>>> prepare_all(const std::vector<synth::ShapeViews>& shapes,
                                                                        const model::HvpParams<float>& params,
                                                                        const synth::CameraRig& rig) {
  std::vector<std::vector<model::PreparedPair<float>>> out;
  out.reserve(shapes.size());
  for (const auto& s : shapes) {
    if (s.view_size != params.config.view_size)
      throw ConfigError("shape " + std::to_string(s.shape_id) + " has " + std::to_string(s.view_size) +
                        "px views but the model expects " + std::to_string(params.config.view_size));
    std::vector<model::PreparedPair<float>> pairs;
    for (const auto& vp : synth::view_pairs(s, rig)) pairs.push_back(model::prepare_pair(vp, params));
    out.push_back(std::move(pairs));
  }
  return out;
}

inline void check_ids(const std::vector<synth::ShapeViews>& shapes) {
  if (shapes.empty()) throw ConfigError("no shapes to train on");
  std::vector<int> ids;
  for (const auto& s : shapes) ids.push_back(s.shape_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("duplicate shape_id in input");
}

inline std::string describe(std::size_t step, const LossRow& r) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << ": l_r=" << r.l_r << " l_u=" << r.l_u << " l_u_prime=" << r.l_u_prime
     << " total=" << r.total;
  return os.str();
}

/// Shared optimization loop. With `update_network` false the parameters are
/// frozen and only F moves.
inline RunRecord optimize(const std::vector<synth::ShapeViews>& shapes, model::HvpParams<float>& params,
                          feat::FeatureTable& table, const TrainConfig& cfg, const synth::CameraRig& rig,
                          bool update_network, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  const auto prepared = prepare_all(shapes, params, rig);
  std::optional<ad::Adam<float>> adam;
  if (update_network) adam.emplace(params.trainable(), ad::AdamConfig{.lr = cfg.net_lr});

  RunRecord rec;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(shapes.size(), cfg.seed, epoch);
    EpochStats stats;
    stats.epoch = epoch + 1;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.pairs_per_step) {
      const std::size_t end = std::min(order.size(), begin + cfg.pairs_per_step);
      ++step;
      const auto dirs = resolve(cfg.direction, cfg.seed, step);
      std::vector<std::pair<int, ad::Tensor<float>>> globals;
      ad::Tensor<float> total;
      LossRow row;
      row.step = step;
      for (std::size_t k = begin; k < end; ++k) {
        const int id = shapes[order[k].shape].shape_id;
        auto f = table.tensor<float>(id, cfg.use_global_feature);
        auto bundle = model::forward_prepared(f, prepared[order[k].shape][order[k].pair], params, dirs, cfg.loss_mask);
        row.l_r += bundle.l_r.item();
        row.l_u += bundle.l_u.item();
        row.l_u_prime += bundle.l_u_prime.item();
        row.total += bundle.total.item();
        total = total.defined() ? ad::add(total, bundle.total) : bundle.total;
        globals.emplace_back(id, f);
      }
      if (!std::isfinite(row.total) || !std::isfinite(row.l_r) || !std::isfinite(row.l_u) ||
          !std::isfinite(row.l_u_prime))
        throw NumericError(describe(step, row));
      if (adam) adam->zero_grad();
      if (total.node()->requires_grad) ad::backward(total);
      if (adam) adam->step();
      if (cfg.use_global_feature) {
        for (auto& [id, f] : globals) {
          if (!f.has_grad()) continue;
          try {
            table.update(id, f.grad());
          } catch (const NumericError& e) {
            throw NumericError(describe(step, row) + " (" + e.what() + ")");
          }
        }
      }
      rec.losses.push_back(row);
      stats.steps += 1;
      stats.l_r += row.l_r;
      stats.l_u += row.l_u;
      stats.l_u_prime += row.l_u_prime;
      stats.total += row.total;
    }
    const double n = static_cast<double>(stats.steps);
    stats.l_r /= n;
    stats.l_u /= n;
    stats.l_u_prime /= n;
    stats.total /= n;
    rec.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

inline model::HvpConfig effective_model(model::HvpConfig m, const TrainConfig& t) {
  m.alpha = t.alpha;
  m.beta = t.beta;
  m.use_global_feature = t.use_global_feature;
  m.validate();
  return m;
}

inline std::vector<int> ids_of(const std::vector<synth::ShapeViews>& shapes) {
  std::vector<int> ids;
  for (const auto& s : shapes) ids.push_back(s.shape_id);
  return ids;
}

inline std::uint64_t table_seed(std::uint64_t seed) { return seed ^ 0x4645415455524553ULL; }

}  // namespace detail

/// Known-test mode: every shape given (training and test alike) gets a
/// feature, learned jointly with the network. The input carries no labels.
inline TrainResult train_known(const std::vector<synth::ShapeViews>& shapes, const model::HvpConfig& model_cfg,
                               const TrainConfig& cfg, const synth::CameraRig& rig,
                               const EpochCallback& on_epoch = {}, const std::string& dataset_id = "") {
  cfg.validate();
  detail::check_ids(shapes);
  const auto mcfg = detail::effective_model(model_cfg, cfg);
  TrainResult out{model::HvpParams<float>::init(mcfg, cfg.seed),
                  feat::FeatureTable::init(detail::ids_of(shapes), mcfg.feature_dim, detail::table_seed(cfg.seed),
                                           cfg.epsilon),
                  {}};
  out.record = detail::optimize(shapes, out.params, out.table, cfg, rig, true, on_epoch);
  out.record.mode = "known";
  out.record.config = {{"model", io::model_config_to_json(mcfg)}, {"train", cfg.to_json()}};
  out.record.config_hash =
      config_hash(mcfg, cfg, dataset_id.empty() ? shapes_fingerprint(shapes) : dataset_id, "known");
  return out;
}

/// Unknown-test mode: network parameters are fixed; only the given shapes'
/// features are optimized. `pretrained` is never modified.
inline TrainResult embed_unknown(const std::vector<synth::ShapeViews>& shapes,
                                 const model::HvpParams<float>& pretrained, const TrainConfig& cfg,
                                 const synth::CameraRig& rig, const EpochCallback& on_epoch = {},
                                 const std::string& dataset_id = "") {
  cfg.validate();
  detail::check_ids(shapes);
  if (!cfg.use_global_feature) throw ConfigError("embed_unknown optimizes F and requires use_global_feature");
  const auto mcfg = detail::effective_model(pretrained.config, cfg);
  TrainResult out{pretrained.clone(),
                  feat::FeatureTable::init(detail::ids_of(shapes), mcfg.feature_dim,
                                           detail::table_seed(cfg.seed) ^ 0x554e4b4e4f574eULL, cfg.epsilon),
                  {}};
  out.params.config = mcfg;
  ad::set_requires_grad(out.params.all(), false);
  out.record = detail::optimize(shapes, out.params, out.table, cfg, rig, false, on_epoch);
  out.params.config = pretrained.config;
  out.record.mode = "unknown";
  out.record.config = {{"model", io::model_config_to_json(mcfg)}, {"train", cfg.to_json()}};
  out.record.config_hash =
      config_hash(mcfg, cfg, dataset_id.empty() ? shapes_fingerprint(shapes) : dataset_id, "unknown");
  return out;
}

// ---------------------------------------------------------------------------
// Shape descriptors

struct Descriptors {
  std::vector<int> ids;
  std::vector<std::vector<float>> rows;
};

/// Encoder states of both directions for all 20 pairs of one shape.
inline std::vector<std::vector<float>> shape_hiddens(const synth::ShapeViews& shape,
                                                     const model::HvpParams<float>& params,
                                                     const feat::FeatureTable* table, const synth::CameraRig& rig) {
  const bool with_f = params.config.use_global_feature;
  if (with_f && table == nullptr) throw ConfigError("pooling with F requires a feature table");
  ad::Tensor<float> f;
  if (with_f) f = table->tensor<float>(shape.shape_id, false);
  std::vector<std::vector<float>> out;
  for (const auto& vp : synth::view_pairs(shape, rig)) {
    const auto pair = model::prepare_pair(vp, params);
    for (const auto* seq : {&pair.f_i, &pair.f_o}) out.push_back(model::encode(f, *seq, params).vec());
  }
  return out;
}

/// Per-shape descriptor used by the probes: the learned F, or the pooled
/// encoder states.
inline Descriptors descriptors(const std::vector<synth::ShapeViews>& shapes, const model::HvpParams<float>& params,
                               const feat::FeatureTable& table, Aggregation mode, const synth::CameraRig& rig) {
  Descriptors d;
  for (const auto& s : shapes) {
    d.ids.push_back(s.shape_id);
    if (mode == Aggregation::implicit_f) {
      auto r = table.row(s.shape_id);
      d.rows.emplace_back(r.begin(), r.end());
    } else {
      const auto pool = mode == Aggregation::mean_pool ? feat::PoolMode::mean : feat::PoolMode::max;
      d.rows.push_back(feat::pool_hidden(shape_hiddens(s, params, &table, rig), pool));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Ablation matrix

struct AblationArm {
  std::string table;  // "loss", "direction" or "aggregation"
  std::string name;
  TrainConfig train;
};

inline std::vector<AblationArm> loss_arms(const TrainConfig& base) {
  auto arm = [&](const char* name, bool r, bool u, bool up) {
    TrainConfig c = base;
    c.loss_mask = {r, u, up};
    c.direction = DirectionMode::both;
    c.aggregation = Aggregation::implicit_f;
    c.use_global_feature = true;
    return AblationArm{"loss", name, c};
  };
  return {arm("L_U", false, true, false), arm("L_U+beta*L_U'", false, true, true),
          arm("L_U+alpha*L_R", true, true, false), arm("all", true, true, true)};
}

inline std::vector<AblationArm> direction_arms(const TrainConfig& base) {
  std::vector<AblationArm> arms;
  for (auto d : {DirectionMode::o2i, DirectionMode::i2o, DirectionMode::random_one, DirectionMode::both}) {
    TrainConfig c = base;
    c.direction = d;
    c.loss_mask = {};
    c.aggregation = Aggregation::implicit_f;
    c.use_global_feature = true;
    arms.push_back({"direction", direction_name(d), c});
  }
  return arms;
}

inline std::vector<AblationArm> aggregation_arms(const TrainConfig& base) {
  std::vector<AblationArm> arms;
  for (bool with_f : {false, true}) {
    for (auto a : {Aggregation::mean_pool, Aggregation::max_pool}) {
      TrainConfig c = base;
      c.loss_mask = {};
      c.direction = DirectionMode::both;
      c.aggregation = a;
      c.use_global_feature = with_f;
      arms.push_back({"aggregation", std::string(aggregation_name(a)) + (with_f ? "+F" : "-F"), c});
    }
  }
  TrainConfig c = base;
  c.loss_mask = {};
  c.direction = DirectionMode::both;
  c.aggregation = Aggregation::implicit_f;
  c.use_global_feature = true;
  arms.push_back({"aggregation", "implicit_f", c});
  return arms;
}

struct AblationRow {
  AblationArm arm;
  RunRecord record;
  io::json metrics;
};

/// Scores one arm's descriptors; receives the arm for context.
using Evaluator = std::function<io::json(const AblationArm&, const Descriptors&)>;

/// Trains each distinct training configuration once (arms differing only in
/// aggregation share a run) and evaluates every arm, in order.
inline std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms,
                                             const std::vector<synth::ShapeViews>& shapes,
                                             const model::HvpConfig& model_cfg, const synth::CameraRig& rig,
                                             const Evaluator& evaluate, const EpochCallback& on_epoch = {}) {
  std::map<std::string, TrainResult> trained;
  std::vector<AblationRow> rows;
  for (const auto& arm : arms) {
    const std::string key = arm.train.training_json().dump();
    auto it = trained.find(key);
    if (it == trained.end()) it = trained.emplace(key, train_known(shapes, model_cfg, arm.train, rig, on_epoch)).first;
    const auto& result = it->second;
    const auto d = descriptors(shapes, result.params, result.table, arm.train.aggregation, rig);
    rows.push_back({arm, result.record, evaluate ? evaluate(arm, d) : io::json::object()});
  }
  return rows;
}

}  // namespace hvp::train
