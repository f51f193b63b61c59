#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "descan/error.hpp"

namespace descan::nn {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  fail(ErrorKind::invalid_argument, op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Gradient recording is on by default; NoGrad disables it for the current
// thread (frozen-network inference).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGrad {
 public:
  NoGrad() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGrad() { grad_mode() = previous_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    if (data.size() != numel(shape))
      fail(ErrorKind::invalid_argument, "tensor data length " + std::to_string(data.size()) +
                                            " does not match shape " + shape_str(shape));
    for (int d : shape)
      if (d <= 0) fail(ErrorKind::invalid_argument, "tensor dimensions must be positive: " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const {
    require(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad() { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  const NodePtr& node() const { return node_; }

  // Result tensor of an op. Gradients are recorded only when grad mode is on
  // and at least one input requires them.
  static Tensor make_result(Shape shape, std::vector<T> value, std::vector<NodePtr> parents,
                            std::function<void(Node<T>&)> backward_fn) {
    Tensor out(std::move(shape), std::move(value));
    if (!grad_mode()) return out;
    const bool any = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents = std::move(parents);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

 private:
  NodePtr node_;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable leaf that requires them. The graph is released afterwards, so a
// second call on the same loss is an error.
template <class T>
void backward(Tensor<T>& loss) {
  const auto& root = loss.node();
  if (!root) fail(ErrorKind::invalid_argument, "backward: empty tensor");
  if (loss.size() != 1) fail(ErrorKind::invalid_argument, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (root->consumed) fail(ErrorKind::invalid_argument, "backward: stale graph (already differentiated)");
  if (!root->requires_grad) fail(ErrorKind::invalid_argument, "backward: loss does not depend on any parameter");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
  for (Node<T>* node : order) {
    if (!node->backward_fn) continue;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->consumed = true;
  }
  root->consumed = true;
}

}  // namespace descan::nn
