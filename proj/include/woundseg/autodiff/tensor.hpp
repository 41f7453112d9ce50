#pragma once

// Tensors that record the operations producing them and propagate gradients
// back through that record. Scalar type is a template parameter: float for
// training, double for gradient verification.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "woundseg/core/error.hpp"

namespace woundseg::ad {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    check_shape(shape);
    auto n = std::make_shared<Node<T>>();
    n->value.assign(shape_numel(shape), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    check_shape(shape);
    if (values.size() != shape_numel(shape))
      throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  // Direct writes bypass the graph; only for leaves (parameters, inputs).
  std::span<T> mutable_values() { return node_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("Tensor::item on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Fresh leaf holding a copy of the values, with no history.
  Tensor detach_copy(bool requires_grad = false) const {
    return from(shape(), node_->value, requires_grad);
  }

  const char* op() const { return node_->op; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

 private:
  static void check_shape(const Shape& s) {
    if (s.empty() || s.size() > 4) throw ShapeError("Tensor: rank must be 1..4, got " + shape_str(s));
    for (int d : s)
      if (d <= 0) throw ShapeError("Tensor: non-positive dimension in " + shape_str(s));
  }

  std::shared_ptr<Node<T>> node_;
};

// While a NoGradGuard is alive on this thread, ops record no history.
inline thread_local bool grad_mode_enabled = true;

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled) { grad_mode_enabled = false; }
  ~NoGradGuard() { grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
void check_finite(std::span<const T> values, const char* op) {
  for (T v : values)
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
}

// Builds an op result. History is recorded only when an input needs grads.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  check_finite<T>(value, op);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  const bool any = grad_mode_enabled && std::any_of(inputs.begin(), inputs.end(),
                               [](const auto& in) { return in->requires_grad; });
  if (any) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

// Reverse-mode sweep from a scalar root. Leaf grads accumulate across calls;
// interior grads are reset for each sweep.
template <class T>
void backward(const Tensor<T>& root) {
  if (root.numel() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS gives a topological order.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order)
    if (n->backward_fn) n->grad.assign(n->value.size(), T(0));
  Node<T>* r = root.node().get();
  r->ensure_grad();
  r->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

}  // namespace woundseg::ad
