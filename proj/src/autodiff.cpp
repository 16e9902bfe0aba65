// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/autodiff.hpp"

#include <sstream>
#include <unordered_set>

namespace mvtf {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

template <typename Scalar>
Var<Scalar>::Var(Tensor<Scalar> value, bool requires_grad) : node_(std::make_shared<Node<Scalar>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Var<Scalar>::grad() const {
  if (node_->has_grad) return node_->grad;
  return Tensor<Scalar>::zeros(node_->value.shape());
}

template <typename Scalar>
void Var<Scalar>::zero_grad() {
  node_->grad = Tensor<Scalar>();
  node_->has_grad = false;
}

template <typename Scalar>
void Var<Scalar>::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() needs a single-element output, got " + to_string(shape()));
  }
  backward(Tensor<Scalar>(node_->value.shape(), Scalar(1)));
}

template <typename Scalar>
void Var<Scalar>::backward(const Tensor<Scalar>& seed) const {
  if (seed.shape() != shape()) throw ShapeError("backward seed", seed.shape(), shape());
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<Scalar>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer().array() += seed.array();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (!n->backward || !n->has_grad) continue;
    n->backward(*n);
    // Interior gradients are not retained.
    n->grad = Tensor<Scalar>();
    n->has_grad = false;
  }
}

template class Var<float>;
template class Var<double>;

}  // namespace mvtf
