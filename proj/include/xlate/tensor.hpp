#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap handle onto a shared Node. Ops in ops.hpp build new
// nodes; when gradient recording is enabled and any input requires a
// gradient, the result remembers its parents and a backward closure.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "xlate/errors.hpp"

namespace xlate {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMat<Scalar>>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Shape shape;
  Vec<Scalar> value;
  Vec<Scalar> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Vec<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vec<Scalar>::Zero(value.size());
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  Tensor(Shape shape, Vec<Scalar> data, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Vec<Scalar>::Zero(n), requires_grad);
  }

  static Tensor constant(Shape shape, Scalar value) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Vec<Scalar>::Constant(n, value));
  }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    Vec<Scalar> data(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) data[i++] = v;
    return Tensor(std::move(shape), std::move(data));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  Index size() const { return node_->value.size(); }

  const Vec<Scalar>& data() const { return node_->value; }
  /// Direct write access, for initialisation and optimiser updates only.
  Vec<Scalar>& mutable_data() { return node_->value; }

  Scalar item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  Scalar at(Index flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Vec<Scalar>& grad() const { return node_->grad; }
  Vec<Scalar>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0); }

  /// Row-major 2-D view: leading dims flattened, last dim as columns.
  ConstMatMap<Scalar> matrix() const {
    const Index cols = shape().empty() ? 1 : shape().back();
    return ConstMatMap<Scalar>(node_->value.data(), cols == 0 ? 0 : size() / cols, cols);
  }
  MatMap<Scalar> mutable_matrix() {
    const Index cols = shape().empty() ? 1 : shape().back();
    return MatMap<Scalar>(node_->value.data(), cols == 0 ? 0 : size() / cols, cols);
  }

  /// Deep copy of value (no tape, no grad).
  Tensor clone(bool requires_grad = false) const { return Tensor(shape(), data(), requires_grad); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Creates an op result, recording parents and the backward closure only when
/// the tape is on and at least one parent needs a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Vec<Scalar> value, std::vector<typename Tensor<Scalar>::NodePtr> parents,
                           std::function<void(Node<Scalar>&)> backward_fn) {
  Tensor<Scalar> out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents = std::move(parents);
  node.backward_fn = std::move(backward_fn);
  return out;
}

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward_fn && node->grad.size() == node->value.size()) node->backward_fn(*node);
  }
  // Interior gradients are only needed during the sweep.
  for (Node<Scalar>* node : order) {
    if (node->backward_fn) node->grad.resize(0);
  }
}

}  // namespace xlate
