#pragma once

// Reverse-mode differentiable tensors.
//
// A tensor is a shared handle to a graph node holding row-major values, an
// optional gradient buffer and, when it was produced by an op while recording
// is enabled, the parents and the closure that pushes its gradient back to
// them. Gradients accumulate; call zero_grad() on parameters between steps.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace blockplan::nn {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Inconsistent shapes or layer configuration.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape) {
    auto n = std::make_shared<NodeT>();
    n->value.assign(numel(shape), T(0));
    n->shape = std::move(shape);
    return BasicTensor(std::move(n));
  }

  static BasicTensor from(Shape shape, std::vector<T> values) {
    if (values.size() != numel(shape))
      throw ShapeError("tensor " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                       " values, got " + std::to_string(values.size()));
    auto n = std::make_shared<NodeT>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return BasicTensor(std::move(n));
  }

  static BasicTensor scalar(T v) { return from({1}, {v}); }

  /// Leaf that accumulates gradients.
  static BasicTensor parameter(Shape shape, std::vector<T> values) {
    BasicTensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Runs the reverse pass from this scalar.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() needs a scalar, got " + to_string(shape()));
    if (!node_->requires_grad) return;

    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeT* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward && !(*it)->grad.empty()) (*it)->backward(**it);
    }
  }

  /// Deep copy of the values into a fresh leaf.
  BasicTensor clone() const { return from(shape(), node_->value); }

  NodeT& node() const { return *node_; }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

  explicit BasicTensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<NodeT> node_;
};

using Tensor = BasicTensor<float>;

namespace detail {

/// Creates the output node of an op. Recording happens only when grad mode
/// is on and at least one input requires a gradient.
template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> value,
                           std::initializer_list<BasicTensor<T>> inputs) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_mode()) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
      for (const auto& in : inputs)
        if (in.defined()) n->parents.push_back(in.node_ptr());
    }
  }
  return BasicTensor<T>(std::move(n));
}

}  // namespace detail

}  // namespace blockplan::nn
