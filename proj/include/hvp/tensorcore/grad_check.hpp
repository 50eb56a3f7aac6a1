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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hvp/tensorcore/tensor.hpp"

namespace hvp::ad {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so near-zero gradients are
  // compared on an absolute scale of this size.
  double floor = 1e-3;
  // Coordinates probed per input; 0 means every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // input/coordinate of the largest error

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error
       << " coords=" << coords_checked;
    if (!worst.empty()) os << " worst=" << worst;
    return os.str();
  }
};

/// Compares the analytic gradient of `loss_fn()` with respect to every input
/// against central finite differences. `loss_fn` must rebuild its graph from
/// the current values of `inputs` on each call and return a scalar.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.clear_grad();
  }
  {
    Tensor<double> loss = loss_fn();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    analytic.emplace_back(in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                        : std::vector<double>(in.size(), 0.0));
  }

  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords != 0 && coords.size() > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double up = loss_fn().item();
      values[i] = saved - opt.step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        std::ostringstream os;
        os << "input " << t << "[" << i << "] analytic=" << a << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace hvp::ad
