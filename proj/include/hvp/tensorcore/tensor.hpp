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
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hvp/errors.hpp"

namespace hvp::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Handle to a node of the autodiff graph. Copies share the node; use
/// clone() for an independent leaf with the same values.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    std::vector<T> data(numel(shape), T(0));
    return from(std::move(shape), std::move(data));
  }

  static Tensor filled(Shape shape, T value) {
    std::vector<T> data(numel(shape), value);
    return from(std::move(shape), std::move(data));
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive: " + to_string(shape));
    }
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor shape " + to_string(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  // Builds an operation result. `backward` receives the result node and must
  // push its grad into whichever parents have requires_grad set.
  static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                            std::function<void(Node<T>&)> backward) {
    Tensor out = from(std::move(shape), std::move(data));
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(inputs.size());
      for (auto& in : inputs) out.node_->parents.push_back(in.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Writable access is meant for leaves (parameters, inputs under finite
  // differences); mutating an interior node invalidates its graph.
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  T operator[](std::size_t i) const { return node_->data[i]; }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
    node_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  void clear_grad() { node_->grad.clear(); }

  /// Same values, cut from the graph.
  Tensor detach() const { return from(node_->shape, node_->data); }

  /// Independent leaf copy that keeps the requires_grad flag.
  Tensor clone() const {
    Tensor out = detach();
    out.node_->requires_grad = requires_grad();
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> values(node_->data.begin(), node_->data.end());
    auto out = Tensor<U>::from(node_->shape, std::move(values));
    out.set_requires_grad(requires_grad());
    return out;
  }

  const NodePtr& node() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

/// Topologically ordered view of every node reachable from a root.
template <class T>
class Graph {
 public:
  static Graph trace(const Tensor<T>& root) {
    Graph g;
    std::unordered_set<const Node<T>*> seen;
    // Iterative post-order DFS; parents always precede children in `order_`.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        continue;
      }
      g.order_.push_back(node);
      stack.pop_back();
    }
    return g;
  }

  const std::vector<Node<T>*>& nodes() const { return order_; }

 private:
  std::vector<Node<T>*> order_;
};

/// Reverse-mode sweep from a scalar loss. Interior grads are recomputed from
/// scratch on each call; leaf grads accumulate across calls until zeroed.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  const Graph<T> graph = Graph<T>::trace(loss);
  for (Node<T>* node : graph.nodes()) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
  }
  loss.node()->ensure_grad()[0] += T(1);
  const auto& order = graph.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->is_leaf()) node->backward(*node);
  }
}

}  // namespace hvp::ad
