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

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hvp/tensorcore/params.hpp"

namespace hvp::ad {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one parameter array.
template <class T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// Bias-corrected Adam update of `params` in place. `step` is the 1-based
/// index of this update (shared by every array of a parameter group).
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& state,
               long step, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr_t = static_cast<T>(cfg.lr * std::sqrt(c2) / c1);
  const T eps_t = static_cast<T>(cfg.eps * std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    params[i] -= lr_t * state.m[i] / (std::sqrt(state.v[i]) + eps_t);
  }
}

/// Adam over a parameter group; parameters without a grad are skipped.
template <class T>
class Adam {
 public:
  Adam(ParamGroup<T> group, AdamConfig cfg) : group_(std::move(group)), cfg_(cfg) {
    state_.resize(group_.size());
  }

  void step() {
    ++steps_;
    for (std::size_t i = 0; i < group_.size(); ++i) {
      auto t = group_[i].tensor;
      if (!t.has_grad()) continue;
      adam_step<T>(t.mutable_data(), t.grad(), state_[i], steps_, cfg_);
    }
  }

  void zero_grad() { zero_grads(group_); }
  long steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParamGroup<T> group_;
  AdamConfig cfg_;
  std::vector<AdamMoments<T>> state_;
  long steps_ = 0;
};

}  // namespace hvp::ad
