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
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hvp/errors.hpp"

namespace hvp::eval {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("no feature rows");
  const std::size_t d = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw ShapeError("feature rows differ in dimension");
    for (std::size_t k = 0; k < d; ++k) m(Eigen::Index(i), Eigen::Index(k)) = rows[i][k];
  }
  return m;
}

template <class F>
std::vector<std::vector<double>> to_double_rows(const std::vector<std::vector<F>>& rows) {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.emplace_back(r.begin(), r.end());
  return out;
}

// ---------------------------------------------------------------------------
// Linear softmax probe

struct ProbeConfig {
  double l2_weight = 1e-3;
  std::size_t iters = 500;
  double step_scale = 1.0;  // step = step_scale / (smoothness bound of the objective)
  std::uint64_t seed = 0;
};

struct LinearProbe {
  std::vector<int> classes;  // sorted label values; column k of W scores classes[k]
  Vector mean, scale;        // standardization fitted on the training features
  Matrix weights;            // [d x K]
  Vector bias;               // [K]
  std::vector<double> loss_history;

  Vector scores(std::span<const double> x) const {
    if (x.size() != static_cast<std::size_t>(mean.size()))
      throw ShapeError("probe expects " + std::to_string(mean.size()) + "-dim features, got " +
                       std::to_string(x.size()));
    Vector z(mean.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = (x[std::size_t(k)] - mean(k)) / scale(k);
    return weights.transpose() * z + bias;
  }

  int predict(std::span<const double> x) const {
    const Vector s = scores(x);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < s.size(); ++k)
      if (s(k) > s(best)) best = k;
    return classes[std::size_t(best)];
  }
};

namespace detail {

// Mean cross-entropy + l2/2 |W|^2 and its gradient at (W, b).
inline double probe_objective(const Matrix& x, const std::vector<Eigen::Index>& y, const Matrix& w, const Vector& b,
                              double l2, Matrix* gw, Vector* gb) {
  const Eigen::Index n = x.rows();
  Matrix logits = x * w;
  logits.rowwise() += b.transpose();
  double loss = 0;
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    double z = 0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) z += std::exp(logits(i, k) - m);
    for (Eigen::Index k = 0; k < logits.cols(); ++k) p(i, k) = std::exp(logits(i, k) - m) / z;
    loss -= logits(i, y[std::size_t(i)]) - m - std::log(z);
  }
  loss = loss / double(n) + 0.5 * l2 * w.squaredNorm();
  if (gw) {
    for (Eigen::Index i = 0; i < n; ++i) p(i, y[std::size_t(i)]) -= 1.0;
    p /= double(n);
    *gw = x.transpose() * p + l2 * w;
    *gb = p.colwise().sum().transpose();
  }
  return loss;
}

}  // namespace detail

/// Multinomial logistic regression on standardized features by full-batch
/// gradient descent with step 1/L, L an upper bound on the gradient's
/// Lipschitz constant. Deterministic given `cfg.seed`.
inline LinearProbe train_linear_probe(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                                      const ProbeConfig& cfg = {}) {
  if (features.size() != labels.size()) throw ShapeError("features and labels differ in count");
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw ConfigError("linear probe needs at least two classes in the training set");
  if (cfg.l2_weight < 0 || cfg.step_scale <= 0) throw ConfigError("probe l2_weight and step_scale must be valid");

  LinearProbe probe;
  probe.classes.assign(distinct.begin(), distinct.end());
  Matrix x = to_matrix(features);
  const Eigen::Index n = x.rows(), d = x.cols(), k = Eigen::Index(probe.classes.size());
  probe.mean = x.colwise().mean().transpose();
  probe.scale = Vector(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double var = (x.col(c).array() - probe.mean(c)).square().sum() / double(n);
    probe.scale(c) = var > 0 ? std::sqrt(var) : 1.0;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = (x.row(i).transpose() - probe.mean).cwiseQuotient(probe.scale).transpose();

  std::vector<Eigen::Index> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    y[i] = std::lower_bound(probe.classes.begin(), probe.classes.end(), labels[i]) - probe.classes.begin();

  // Softmax cross-entropy has Hessian <= 1/2 [x;1][x;1]^T per sample.
  Matrix xa(n, d + 1);
  xa << x, Matrix::Ones(n, 1);
  const double gram_max = Eigen::SelfAdjointEigenSolver<Matrix>((xa.transpose() * xa) / double(n),
                                                                Eigen::EigenvaluesOnly)
                              .eigenvalues()
                              .maxCoeff();
  const double step = cfg.step_scale / (0.5 * gram_max + cfg.l2_weight);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> dist(0.0, 0.01);
  probe.weights = Matrix(d, k);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < k; ++j) probe.weights(i, j) = dist(rng);
  probe.bias = Vector::Zero(k);

  Matrix gw;
  Vector gb;
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    probe.loss_history.push_back(detail::probe_objective(x, y, probe.weights, probe.bias, cfg.l2_weight, &gw, &gb));
    probe.weights -= step * gw;
    probe.bias -= step * gb;
  }
  probe.loss_history.push_back(detail::probe_objective(x, y, probe.weights, probe.bias, cfg.l2_weight, nullptr, nullptr));
  return probe;
}

struct ProbeResult {
  double ins_acc = 0;
  double cla_acc = 0;
  std::vector<int> classes;
  std::vector<std::vector<double>> confusion;  // row = true class, column = predicted; rows normalized
  std::vector<int> predictions;
};

/// Accuracy and confusion of `predictions` over the class list `classes`.
/// cla_acc averages recall over the classes that occur in `labels`.
inline ProbeResult score_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                                     const std::vector<int>& classes) {
  if (predictions.size() != labels.size()) throw ShapeError("predictions and labels differ in count");
  if (labels.empty()) throw ConfigError("no labeled examples to score");
  auto index = [&](int c) -> std::size_t {
    auto it = std::find(classes.begin(), classes.end(), c);
    if (it == classes.end()) throw ContractError("class id " + std::to_string(c) + " was not seen by the probe");
    return std::size_t(it - classes.begin());
  };
  const std::size_t k = classes.size();
  std::vector<std::vector<double>> counts(k, std::vector<double>(k, 0.0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    counts[index(labels[i])][index(predictions[i])] += 1;
    correct += labels[i] == predictions[i];
  }
  ProbeResult r;
  r.classes = classes;
  r.predictions = predictions;
  r.ins_acc = double(correct) / double(labels.size());
  double recall_sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double total = std::accumulate(counts[c].begin(), counts[c].end(), 0.0);
    if (total > 0) {
      for (auto& v : counts[c]) v /= total;
      recall_sum += counts[c][c];
      ++present;
    }
  }
  r.cla_acc = recall_sum / double(present);
  r.confusion = std::move(counts);
  return r;
}

inline ProbeResult classify(const LinearProbe& probe, const std::vector<std::vector<double>>& features,
                            const std::vector<int>& labels) {
  if (features.size() != labels.size()) throw ShapeError("features and labels differ in count");
  for (int c : labels)
    if (!std::binary_search(probe.classes.begin(), probe.classes.end(), c))
      throw ContractError("class id " + std::to_string(c) + " was not seen by the probe");
  std::vector<int> pred;
  pred.reserve(features.size());
  for (const auto& f : features) pred.push_back(probe.predict(f));
  return score_predictions(pred, labels, probe.classes);
}

// ---------------------------------------------------------------------------
// Retrieval

/// AP of one ranked relevance list: mean over relevant ranks r of
/// (relevant found by r) / r. Zero when nothing is relevant.
inline double average_precision(const std::vector<bool>& relevant) {
  double sum = 0;
  std::size_t found = 0;
  for (std::size_t r = 0; r < relevant.size(); ++r) {
    if (!relevant[r]) continue;
    ++found;
    sum += double(found) / double(r + 1);
  }
  return found == 0 ? 0.0 : sum / double(found);
}

/// Indices of all items except `query`, nearest first; ties by id ascending.
inline std::vector<std::size_t> rank_items(const Matrix& x, const std::vector<int>& ids, std::size_t query) {
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (j == query) continue;
    order.emplace_back((x.row(Eigen::Index(j)) - x.row(Eigen::Index(query))).norm(), j);
  }
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : ids[a.second] < ids[b.second];
  });
  std::vector<std::size_t> out;
  out.reserve(order.size());
  for (const auto& [dist, j] : order) out.push_back(j);
  return out;
}

/// Interpolated precision at recall levels 0, 1/(n-1), ..., 1 for one ranking.
inline std::vector<double> interpolated_precision(const std::vector<bool>& relevant, std::size_t n_points) {
  const auto total = std::size_t(std::count(relevant.begin(), relevant.end(), true));
  std::vector<double> recall, precision;
  std::size_t found = 0;
  for (std::size_t r = 0; r < relevant.size(); ++r) {
    found += relevant[r];
    recall.push_back(total ? double(found) / double(total) : 0.0);
    precision.push_back(double(found) / double(r + 1));
  }
  // Suffix maximum: best precision at any rank at or beyond this one.
  for (std::size_t r = precision.size(); r-- > 1;) precision[r - 1] = std::max(precision[r - 1], precision[r]);
  std::vector<double> out(n_points, 0.0);
  for (std::size_t j = 0; j < n_points; ++j) {
    const double level = n_points == 1 ? 1.0 : double(j) / double(n_points - 1);
    auto it = std::find_if(recall.begin(), recall.end(), [&](double v) { return v >= level - 1e-12; });
    out[j] = it == recall.end() ? 0.0 : precision[std::size_t(it - recall.begin())];
  }
  return out;
}

struct RetrievalResult {
  double map = 0;
  std::vector<std::pair<double, double>> pr_points;  // (recall, interpolated precision), averaged over queries
  std::vector<double> ap;                            // per item; NaN for skipped queries
  std::vector<int> skipped;                          // ids of queries with no same-class item
};

inline constexpr std::size_t kDefaultPrPoints = 11;

inline RetrievalResult retrieval_map(const std::vector<int>& ids, const std::vector<std::vector<double>>& features,
                                     const std::vector<int>& labels, std::size_t n_points = kDefaultPrPoints) {
  if (ids.size() != features.size() || ids.size() != labels.size())
    throw ShapeError("ids, features and labels differ in count");
  if (n_points < 2) throw ConfigError("n_points must be at least 2");
  const Matrix x = to_matrix(features);
  RetrievalResult res;
  res.ap.assign(ids.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> curve(n_points, 0.0);
  double ap_sum = 0;
  std::size_t used = 0;
  for (std::size_t q = 0; q < ids.size(); ++q) {
    const auto order = rank_items(x, ids, q);
    std::vector<bool> rel;
    for (std::size_t j : order) rel.push_back(labels[j] == labels[q]);
    if (std::find(rel.begin(), rel.end(), true) == rel.end()) {
      res.skipped.push_back(ids[q]);
      continue;
    }
    res.ap[q] = average_precision(rel);
    ap_sum += res.ap[q];
    const auto p = interpolated_precision(rel, n_points);
    for (std::size_t j = 0; j < n_points; ++j) curve[j] += p[j];
    ++used;
  }
  if (used == 0) throw ConfigError("no query has another item of its class");
  res.map = ap_sum / double(used);
  for (std::size_t j = 0; j < n_points; ++j)
    res.pr_points.emplace_back(double(j) / double(n_points - 1), curve[j] / double(used));
  return res;
}

inline std::vector<std::pair<double, double>> pr_curve(const std::vector<int>& ids,
                                                       const std::vector<std::vector<double>>& features,
                                                       const std::vector<int>& labels, std::size_t n_points) {
  return retrieval_map(ids, features, labels, n_points).pr_points;
}

/// Expected AP of a uniformly random ranking of n items of which r are relevant.
inline double chance_average_precision(std::size_t n, std::size_t r) {
  if (n == 0 || r == 0 || r > n) throw ConfigError("chance AP needs 0 < r <= n");
  double harmonic = 0;
  for (std::size_t k = 1; k <= n; ++k) harmonic += 1.0 / double(k);
  const double tail = n == 1 ? 0.0 : double(r - 1) / double(n - 1) * (double(n) - harmonic);
  return (harmonic + tail) / double(n);
}

}  // namespace hvp::eval
