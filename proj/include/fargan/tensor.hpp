#pragma once

// Dense NCHW tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap shared handle to a Node. Nodes produced by an op keep
// their inputs alive through `parents` and carry a closure that pushes the
// node's gradient into those parents. The graph is rebuilt on every forward
// pass; leaves (parameters, inputs) have no parents.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fargan/errors.hpp"

namespace fargan {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
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
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

}  // namespace detail

/// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    for (Index extent : shape) {
      if (extent <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    node_->shape = std::move(shape);
    set_requires_grad(requires_grad);
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (static_cast<Index>(values.size()) != shape_numel(shape)) {
      throw DimensionError("element count " + std::to_string(values.size()) + " does not match shape " +
                           shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor scalar(T value, bool requires_grad = false) { return Tensor(Shape{1}, value, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  Index numel() const { return static_cast<Index>(node_->data.size()); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T& operator[](Index i) { return node_->data[static_cast<std::size_t>(i)]; }
  T operator[](Index i) const { return node_->data[static_cast<std::size_t>(i)]; }

  // NCHW element access.
  T& at(Index n, Index c, Index y, Index x) { return node_->data[offset4(n, c, y, x)]; }
  T at(Index n, Index c, Index y, Index x) const { return node_->data[offset4(n, c, y, x)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    if (flag) {
      node_->ensure_grad();
    } else {
      node_->grad.clear();
    }
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }

  /// Copy of the values with no graph history.
  Tensor detach() const {
    Tensor out;
    out.node_ = std::make_shared<detail::Node<T>>();
    out.node_->shape = node_->shape;
    out.node_->data = node_->data;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> converted(node_->data.begin(), node_->data.end());
    return Tensor<U>(node_->shape, std::move(converted));
  }

  const NodePtr& node() const { return node_; }

  /// Builds an op output. Gradient tracking is attached only when grad mode
  /// is on and at least one parent requires gradients.
  static Tensor from_op(Shape shape, std::vector<T> values, std::vector<NodePtr> parents,
                        std::function<void(detail::Node<T>&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    const bool track = grad_enabled() &&
                       std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (track) {
      out.node_->parents = std::move(parents);
      out.node_->backward_fn = std::move(backward_fn);
      out.node_->requires_grad = true;
    }
    return out;
  }

 private:
  std::size_t offset4(Index n, Index c, Index y, Index x) const {
    const Shape& s = node_->shape;
    return static_cast<std::size_t>(((n * s[1] + c) * s[2] + y) * s[3] + x);
  }

  NodePtr node_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires
/// gradients. Intermediate gradients are reset per call; leaf gradients
/// accumulate across calls until cleared.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next_parent++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node<T>* node : order) {
    if (node->is_leaf()) {
      node->ensure_grad();
    } else {
      node->grad.assign(node->data.size(), T{0});
    }
  }
  order.back()->grad[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

}  // namespace fargan
