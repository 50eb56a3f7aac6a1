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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hvp/container.hpp"
#include "hvp/errors.hpp"
#include "hvp/synthviews.hpp"
#include "hvp/tensorcore/tensor.hpp"

namespace hvp::feat {

inline constexpr double kDefaultEpsilon = 5e-4;
inline constexpr double kInitStddev = 0.02;

/// One learnable global feature F per shape, rows kept in insertion order.
class FeatureTable {
 public:
  FeatureTable() = default;
  explicit FeatureTable(std::size_t dim, double epsilon = kDefaultEpsilon) : dim_(dim), epsilon_(epsilon) {
    if (dim == 0) throw ConfigError("feature table dimension must be positive");
    if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and nonnegative");
  }

  /// Rows drawn from normal(0, 0.02); each row depends only on (seed, shape_id).
  static FeatureTable init(std::span<const int> shape_ids, std::size_t dim, std::uint64_t seed,
                           double epsilon = kDefaultEpsilon) {
    FeatureTable t(dim, epsilon);
    for (int id : shape_ids) {
      std::mt19937_64 rng(synth::splitmix64(synth::splitmix64(seed) ^ static_cast<std::uint64_t>(id)));
      std::normal_distribution<double> dist(0.0, kInitStddev);
      std::vector<float> row(dim);
      for (auto& v : row) v = static_cast<float>(dist(rng));
      t.insert(id, row);
    }
    return t;
  }

  std::size_t dim() const { return dim_; }
  double epsilon() const { return epsilon_; }
  void set_epsilon(double e) {
    if (!(e >= 0) || !std::isfinite(e)) throw ConfigError("epsilon must be finite and nonnegative");
    epsilon_ = e;
  }
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<int>& ids() const { return ids_; }
  bool contains(int id) const { return index_.count(id) != 0; }
  const std::vector<float>& values() const { return values_; }

  void insert(int id, std::span<const float> row) {
    if (contains(id)) throw ConfigError("duplicate shape_id " + std::to_string(id) + " in feature table");
    if (row.size() != dim_)
      throw ShapeError("feature row has " + std::to_string(row.size()) + " values, table dim is " +
                       std::to_string(dim_));
    index_[id] = ids_.size();
    ids_.push_back(id);
    values_.insert(values_.end(), row.begin(), row.end());
  }

  std::span<const float> row(int id) const { return {values_.data() + offset(id), dim_}; }

  /// F as a fresh [1 x D] leaf for one step's graph.
  template <class T>
  ad::Tensor<T> tensor(int id, bool requires_grad = true) const {
    auto r = row(id);
    auto t = ad::Tensor<T>::from({1, dim_}, std::vector<T>(r.begin(), r.end()));
    t.set_requires_grad(requires_grad);
    return t;
  }

  /// F <- F - epsilon * grad, in 32-bit arithmetic. The row is left untouched
  /// if the result would not be finite.
  void update(int id, std::span<const float> grad) {
    if (frozen_) throw ContractError("update_feature on a frozen feature table");
    const std::size_t off = offset(id);
    if (grad.size() != dim_)
      throw ShapeError("gradient has " + std::to_string(grad.size()) + " values, table dim is " +
                       std::to_string(dim_));
    const float eps = static_cast<float>(epsilon_);
    std::vector<float> next(dim_);
    for (std::size_t k = 0; k < dim_; ++k) {
      next[k] = values_[off + k] - eps * grad[k];
      if (!std::isfinite(next[k]))
        throw NumericError("non-finite feature for shape " + std::to_string(id) + " at coordinate " +
                           std::to_string(k));
    }
    std::copy(next.begin(), next.end(), values_.begin() + static_cast<std::ptrdiff_t>(off));
  }

  /// Rows for a subset of ids, in the given order.
  FeatureTable subset(std::span<const int> ids) const {
    FeatureTable t(dim_, epsilon_);
    t.frozen_ = frozen_;
    for (int id : ids) t.insert(id, row(id));
    return t;
  }

  bool operator==(const FeatureTable&) const = default;

 private:
  std::size_t offset(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw LookupError("shape_id " + std::to_string(id) + " not in feature table");
    return it->second * dim_;
  }

  std::size_t dim_ = 0;
  double epsilon_ = kDefaultEpsilon;
  bool frozen_ = false;
  std::vector<int> ids_;
  std::map<int, std::size_t> index_;
  std::vector<float> values_;
};

inline FeatureTable init_table(std::span<const int> shape_ids, std::size_t dim, std::uint64_t seed,
                               double epsilon = kDefaultEpsilon) {
  return FeatureTable::init(shape_ids, dim, seed, epsilon);
}

// ---------------------------------------------------------------------------
// Pooled per-view descriptors (aggregation ablation)

enum class PoolMode { mean, max };

inline const char* pool_mode_name(PoolMode m) { return m == PoolMode::mean ? "mean" : "max"; }

/// Elementwise mean or max over hidden states. Each coordinate is reduced
/// over its sorted values, so the result is bitwise independent of order.
inline std::vector<float> pool_hidden(const std::vector<std::vector<float>>& hiddens, PoolMode mode) {
  if (hiddens.empty()) throw ContractError("pool_hidden needs at least one hidden state");
  const std::size_t d = hiddens.front().size();
  std::vector<float> out(d);
  std::vector<float> column(hiddens.size());
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < hiddens.size(); ++i) {
      if (hiddens[i].size() != d) throw ShapeError("pool_hidden: hidden states differ in dimension");
      column[i] = hiddens[i][k];
    }
    if (mode == PoolMode::max) {
      out[k] = *std::max_element(column.begin(), column.end());
    } else {
      std::sort(column.begin(), column.end());
      double s = 0;
      for (float v : column) s += v;
      out[k] = static_cast<float>(s / static_cast<double>(column.size()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr const char* kTableFormat = "hvp-feature-table";

inline io::json table_manifest(const FeatureTable& t) {
  return {{"format", kTableFormat}, {"version", 1},          {"dtype", "float32"},
          {"dim", t.dim()},         {"epsilon", t.epsilon()}, {"frozen", t.frozen()},
          {"shape_ids", t.ids()}};
}

/// `run`, when not empty, is stored under the manifest's "run" key.
inline void save_table(const FeatureTable& t, const std::filesystem::path& path, const io::json& run = {}) {
  auto m = table_manifest(t);
  if (!run.is_null() && !run.empty()) m["run"] = run;
  io::write_container(path, m, t.values());
}

/// Reads a table; `expected_dim` (when nonzero) must match the stored D.
inline FeatureTable load_table(const std::filesystem::path& path, std::size_t expected_dim = 0) {
  const auto c = io::read_container(path);
  const auto& m = c.manifest;
  const std::string origin = path.string();
  try {
    if (m.at("format") != kTableFormat) throw IoError(origin + ": not a feature table");
    if (m.at("dtype") != "float32") throw IoError(origin + ": unsupported dtype " + m.at("dtype").dump());
    const auto dim = m.at("dim").get<std::size_t>();
    const auto ids = m.at("shape_ids").get<std::vector<int>>();
    if (expected_dim != 0 && dim != expected_dim)
      throw IoError(origin + ": manifest dim " + std::to_string(dim) + " does not match expected " +
                    std::to_string(expected_dim));
    if (c.payload.size() != dim * ids.size())
      throw IoError(origin + ": manifest declares " + std::to_string(ids.size()) + " rows of dim " +
                    std::to_string(dim) + " but payload holds " + std::to_string(c.payload.size()) + " values");
    FeatureTable t(dim, m.at("epsilon").get<double>());
    for (std::size_t r = 0; r < ids.size(); ++r)
      t.insert(ids[r], std::span<const float>(c.payload).subspan(r * dim, dim));
    t.set_frozen(m.at("frozen").get<bool>());
    return t;
  } catch (const io::json::exception& e) {
    throw IoError(origin + ": malformed feature table manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(origin + ": " + e.what());
  }
}

}  // namespace hvp::feat
