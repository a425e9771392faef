/* Copyright 2026 The LinearConv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Dense tensors with a dynamic reverse-mode tape.
//
// A Tensor is a shared handle to a node. Ops build new nodes that remember
// their inputs and a backward rule; backward() walks the reachable graph in
// reverse topological order and accumulates gradients into every node that
// requires them. Interior nodes drop their inputs once the tape has been
// consumed, so only leaf gradients survive a backward pass.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "linearconv/errors.hpp"

namespace linearconv {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Returns the gradient buffer, allocating zeros on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
void check_finite(std::string_view op, std::span<const T> values) {
  // x * 0 is NaN exactly when x is not finite; the branch-free scan vectorizes.
  constexpr std::size_t kBlock = 4096;
  for (std::size_t start = 0; start < values.size(); start += kBlock) {
    const std::size_t end = std::min(values.size(), start + kBlock);
    bool bad = false;
    for (std::size_t i = start; i < end; ++i) bad |= values[i] * T(0) != T(0);
    if (!bad) continue;
    for (std::size_t i = start; i < end; ++i) {
      if (!std::isfinite(values[i])) {
        throw NumericalError("non-finite value produced by op '" + std::string(op) +
                             "' at element " + std::to_string(i));
      }
    }
  }
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording for its lifetime (evaluation, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() : node_(std::make_shared<NodeType>()) {}

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                           std::to_string(values.size()) + " elements");
    }
    detail::check_finite<T>("tensor", values);
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, fill), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->value[i * n + i] = T(1);
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape shape, T lo, T hi, Rng& rng, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  template <typename Rng>
  static Tensor normal(Shape shape, T mean, T stddev, Rng& rng, bool requires_grad = false) {
    std::normal_distribution<double> dist(static_cast<double>(mean),
                                          static_cast<double>(stddev));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Direct write access. Only optimizers and loaders should use this.
  std::span<T> mutable_data() { return node_->value; }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; zeros if nothing has been accumulated yet.
  std::vector<T> grad() const {
    return has_grad() ? node_->grad : std::vector<T>(numel(), T(0));
  }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  std::string_view op() const { return node_->op; }

  /// Fresh leaf holding a copy of the values, outside any tape.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  /// Copy of the values that is a leaf with the given grad flag.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), node_->value, requires_grad);
  }

  /// True when two handles refer to the same node.
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<NodeType>& node() const { return node_; }

  /// Wraps the result of an op. Records inputs and the backward rule only
  /// when grad mode is on and at least one input requires a gradient.
  static Tensor from_op(std::string_view op, Shape shape, std::vector<T> values,
                        std::vector<Tensor> inputs,
                        std::function<void(NodeType&)> backward_fn) {
    detail::check_finite<T>(op, values);
    Tensor out;
    out.node_->shape = std::move(shape);
    out.node_->value = std::move(values);
    out.node_->op = op;
    bool needs = false;
    if (grad_enabled()) {
      for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->inputs.reserve(inputs.size());
      for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  std::shared_ptr<NodeType> node_;
};

/// Reverse-mode sweep from a scalar loss. Populates grad on every
/// requires_grad leaf reachable from `loss` and releases the tape.
template <typename T>
void backward(const Tensor<T>& loss) {
  using NodeT = detail::Node<T>;
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw Error("backward(): loss is not connected to any tensor that requires grad");
  }

  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  NodeT& root = *loss.node();
  root.grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT& node = **it;
    if (node.backward_fn && !node.grad.empty()) {
      node.backward_fn(node);
      // Interior gradients and saved buffers are dead once propagated.
      node.backward_fn = nullptr;
      std::vector<T>().swap(node.grad);
    }
  }
  // Post-order: every node's inputs precede it, so releasing a node's inputs
  // only frees entries already visited.
  for (NodeT* node : order) {
    if (!node->inputs.empty()) {
      node->backward_fn = nullptr;
      node->grad.clear();
      node->inputs.clear();
    } else if (!node->grad.empty()) {
      detail::check_finite<T>("backward", node->grad);
    }
  }
}

}  // namespace linearconv
