// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mvtf/tensor.hpp"

namespace mvtf {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into the parents' gradients.
  std::function<void(Node&)> backward;

  Tensor<Scalar>& grad_buffer() {
    if (!has_grad) {
      grad = Tensor<Scalar>::zeros(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
///
/// Gradients accumulate additively across every use of a variable; call
/// `zero_grad` between optimisation steps.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false);

  static Var constant(Tensor<Scalar> value) { return Var(std::move(value), false); }
  static Var parameter(Tensor<Scalar> value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; zeros when nothing has flowed back yet.
  Tensor<Scalar> grad() const;
  bool has_grad() const { return node_->has_grad; }
  void zero_grad();

  /// Seeds d(this)/d(this) = 1; the value must hold exactly one element.
  void backward() const;
  void backward(const Tensor<Scalar>& seed) const;

  Var detach() const { return Var(node_->value, false); }

  const NodePtr& node() const { return node_; }
  static Var from_node(NodePtr node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

 private:
  NodePtr node_;
};

using VarXd = Var<double>;
using VarXf = Var<float>;

extern template class Var<float>;
extern template class Var<double>;

}  // namespace mvtf
