#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ffpdet/common.hpp"

namespace ffpdet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Pulls this node's grad into the parents' grads. Null on leaves.
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Reverse-mode tracking switch; ops built while disabled record no graph.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// RAII guard that disables graph recording (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_mode_enabled() { return detail::grad_mode(); }

/// Dense NCHW-style tensor with reverse-mode automatic differentiation.
/// A Tensor is a shared handle: copies alias the same storage and graph node.
template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data.assign(shape_numel(t.node_->shape), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_values({1}, {value}, requires_grad);
  }

  static Tensor from_values(Shape shape, std::vector<T> values,
                            bool requires_grad = false) {
    require<ShapeError>(shape_numel(shape) == (int64_t)values.size(),
                        "from_values: " + std::to_string(values.size()) +
                            " values for shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  /// Interior graph node. The backward function receives the node and must
  /// accumulate into its parents' grad buffers. If tracking is disabled or
  /// no parent is tracked, the result is a detached value.
  static Tensor make_op(Shape shape, std::vector<Tensor> parents,
                        std::function<void(Node&)> backward_fn) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data.assign(shape_numel(t.node_->shape), T(0));
    bool track = grad_mode_enabled();
    if (track) {
      bool any = false;
      for (const auto& p : parents) any = any || p.requires_grad();
      track = any;
    }
    if (track) {
      t.node_->requires_grad = true;
      for (auto& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }
  int64_t numel() const { return (int64_t)node_->data.size(); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  T* ptr() { return node_->data.data(); }
  const T* ptr() const { return node_->data.data(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) {
    require<Error>(node_->parents.empty(),
                   "set_requires_grad is only valid on leaf tensors");
    node_->requires_grad = v;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::vector<T>& grad() {
    require<Error>(has_grad(), "gradient has not been allocated");
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    require<Error>(has_grad(), "gradient has not been allocated");
    return node_->grad;
  }
  void ensure_grad() { node_->ensure_grad(); }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    require<ShapeError>(numel() == 1, "item() on tensor of " +
                                          std::to_string(numel()) +
                                          " elements");
    return node_->data[0];
  }

  bool is_leaf() const { return node_->parents.empty(); }

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
  /// calls; interior gradients are scratch and reset on every sweep.
  void backward() {
    require<ShapeError>(numel() == 1, "backward() requires a scalar tensor");
    require<Error>(requires_grad(), "backward() on a non-tracked tensor");
    std::vector<Node*> order;
    topo_order(order);
    for (Node* n : order)
      if (!n->parents.empty()) {
        n->ensure_grad();
        std::fill(n->grad.begin(), n->grad.end(), T(0));
      }
    node_->ensure_grad();
    if (node_->parents.empty()) {
      node_->grad[0] += T(1);
      return;
    }
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  void topo_order(std::vector<Node*>& order) const {
    // Iterative DFS post-order over tracked parents.
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node* p = n->parents[i++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

/// Accumulate `g` into the grad buffer of `node` (helper for backward fns).
template <typename T>
inline void accumulate_grad(detail::TensorNode<T>& node, const T* g,
                            int64_t count) {
  node.ensure_grad();
  for (int64_t i = 0; i < count; ++i) node.grad[i] += g[i];
}

}  // namespace ffpdet
