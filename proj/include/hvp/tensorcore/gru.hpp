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

#include <cstddef>
#include <string>

#include "hvp/tensorcore/ops.hpp"
#include "hvp/tensorcore/params.hpp"

namespace hvp::ad {

/// Weights of one GRU cell acting on row vectors: x[1 x in], h[1 x hidden].
template <class T>
struct GruWeights {
  Tensor<T> w_z, w_r, w_n;  // [in x hidden]
  Tensor<T> u_z, u_r, u_n;  // [hidden x hidden]
  Tensor<T> b_z, b_r, b_n;  // [1 x hidden]

  std::size_t input_dim() const { return w_z.dim(0); }
  std::size_t hidden_dim() const { return w_z.dim(1); }

  template <class Rng>
  static GruWeights normal(std::size_t in, std::size_t hidden, double stddev, Rng& rng) {
    GruWeights g;
    g.w_z = normal_tensor<T>({in, hidden}, stddev, rng);
    g.w_r = normal_tensor<T>({in, hidden}, stddev, rng);
    g.w_n = normal_tensor<T>({in, hidden}, stddev, rng);
    g.u_z = normal_tensor<T>({hidden, hidden}, stddev, rng);
    g.u_r = normal_tensor<T>({hidden, hidden}, stddev, rng);
    g.u_n = normal_tensor<T>({hidden, hidden}, stddev, rng);
    g.b_z = normal_tensor<T>({1, hidden}, stddev, rng);
    g.b_r = normal_tensor<T>({1, hidden}, stddev, rng);
    g.b_n = normal_tensor<T>({1, hidden}, stddev, rng);
    return g;
  }

  static GruWeights zeros(std::size_t in, std::size_t hidden) {
    GruWeights g;
    g.w_z = Tensor<T>::zeros({in, hidden});
    g.w_r = Tensor<T>::zeros({in, hidden});
    g.w_n = Tensor<T>::zeros({in, hidden});
    g.u_z = Tensor<T>::zeros({hidden, hidden});
    g.u_r = Tensor<T>::zeros({hidden, hidden});
    g.u_n = Tensor<T>::zeros({hidden, hidden});
    g.b_z = Tensor<T>::zeros({1, hidden});
    g.b_r = Tensor<T>::zeros({1, hidden});
    g.b_n = Tensor<T>::zeros({1, hidden});
    return g;
  }

  void append_to(ParamGroup<T>& group, const std::string& prefix) const {
    group.push_back({prefix + ".w_z", w_z});
    group.push_back({prefix + ".w_r", w_r});
    group.push_back({prefix + ".w_n", w_n});
    group.push_back({prefix + ".u_z", u_z});
    group.push_back({prefix + ".u_r", u_r});
    group.push_back({prefix + ".u_n", u_n});
    group.push_back({prefix + ".b_z", b_z});
    group.push_back({prefix + ".b_r", b_r});
    group.push_back({prefix + ".b_n", b_n});
  }
};

/// One GRU step:
///   z  = sigmoid(x W_z + h U_z + b_z)
///   r  = sigmoid(x W_r + h U_r + b_r)
///   n  = tanh(x W_n + (r * h) U_n + b_n)
///   h' = (1 - z) * n + z * h
template <class T>
Tensor<T> gru_step(const Tensor<T>& x, const Tensor<T>& h_prev, const GruWeights<T>& w) {
  detail::require(x.rank() == 2 && x.dim(0) == 1 && x.dim(1) == w.input_dim(),
                  "gru_step: input " + to_string(x.shape()) + " expects [1x" +
                      std::to_string(w.input_dim()) + "]");
  detail::require(h_prev.rank() == 2 && h_prev.dim(0) == 1 && h_prev.dim(1) == w.hidden_dim(),
                  "gru_step: hidden " + to_string(h_prev.shape()) + " expects [1x" +
                      std::to_string(w.hidden_dim()) + "]");
  const auto z = sigmoid(add(add(matmul(x, w.w_z), matmul(h_prev, w.u_z)), w.b_z));
  const auto r = sigmoid(add(add(matmul(x, w.w_r), matmul(h_prev, w.u_r)), w.b_r));
  const auto n = tanh(add(add(matmul(x, w.w_n), matmul(mul(r, h_prev), w.u_n)), w.b_n));
  // (1 - z) * n + z * h == n + z * (h - n)
  return add(n, mul(z, sub(h_prev, n)));
}

}  // namespace hvp::ad
