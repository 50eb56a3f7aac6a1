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

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hvp/tensorcore/tensor.hpp"

namespace hvp::ad {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered list of named parameters. Order is the serialization order.
template <class T>
using ParamGroup = std::vector<NamedTensor<T>>;

/// Leaf tensor filled from normal(0, stddev).
template <class T, class Rng>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(values));
}

template <class T>
void zero_grads(const ParamGroup<T>& group) {
  for (const auto& p : group) {
    auto t = p.tensor;
    t.zero_grad();
  }
}

template <class T>
void set_requires_grad(const ParamGroup<T>& group, bool flag) {
  for (const auto& p : group) {
    auto t = p.tensor;
    t.set_requires_grad(flag);
  }
}

/// FNV-1a over the raw bytes of every parameter, in group order.
template <class T>
std::uint64_t checksum(const ParamGroup<T>& group) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : group) {
    mix(p.name.data(), p.name.size());
    mix(p.tensor.data().data(), p.tensor.size() * sizeof(T));
  }
  return h;
}

}  // namespace hvp::ad
