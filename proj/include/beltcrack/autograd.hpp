#pragma once

#include "beltcrack/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

namespace beltcrack {

// Thread-local switch for graph recording. Inference runs with recording off
// so intermediate buffers are released as soon as they go out of scope.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Running multiply-add count of every conv2d and matmul forward on this
// thread. Used for analytic cost reports.
class MacCounter {
 public:
  static void reset();
  static long long value();
  static void add(long long macs);
};

namespace detail {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  Tensor<Scalar>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<Scalar>(value.shape());
    return grad;
  }
};

}  // namespace detail

// Handle to a value in the computation graph. Copies share the node, so a
// parameter held by a layer and the same parameter in an optimizer's list
// are one object.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<detail::Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(int axis) const { return node_->value.dim(axis); }
  Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Gradient of the last backward() pass; zero-shaped until one runs.
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.set_zero();
  }

  // Reverse-mode sweep from a single-element output.
  void backward() const;

  const NodePtr& node() const { return node_; }

  // Builds an interior node. Recording is skipped when no parent needs a
  // gradient or GradMode is off.
  static Var make(Tensor<Scalar> value, std::vector<Var> parents,
                  std::function<void(detail::Node<Scalar>&)> backward);

 private:
  NodePtr node_;
};

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), false);
}

template <typename Scalar>
Var<Scalar> parameter(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), true);
}

template <typename Scalar>
Var<Scalar> Var<Scalar>::make(Tensor<Scalar> value, std::vector<Var> parents,
                              std::function<void(detail::Node<Scalar>&)> backward) {
  Var out(std::move(value), false);
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <typename Scalar>
void Var<Scalar>::backward() const {
  if (node_->value.size() != 1) {
    throw std::invalid_argument("backward() needs a single-element output, got " + shape_string(shape()));
  }
  // Iterative post-order DFS gives a topological order without recursion
  // depth limits on long graphs.
  using NodeT = detail::Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (NodeT* n : order) {
    if (n->backward) n->grad = Tensor<Scalar>(n->value.shape());
  }
  node_->grad_buffer().values().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace beltcrack
