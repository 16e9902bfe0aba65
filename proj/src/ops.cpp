// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvtf {
namespace {

template <typename S>
using NodeT = Node<S>;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
bool tracking(const std::vector<Var<S>>& inputs) {
  if (NoGradGuard::active()) return false;
  for (const auto& v : inputs) {
    if (v.defined() && v.requires_grad()) return true;
  }
  return false;
}

template <typename S, typename Fn>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs, Fn&& backward) {
  auto node = std::make_shared<NodeT<S>>();
  node->value = std::move(value);
  if (tracking(inputs)) {
    node->requires_grad = true;
    for (auto& v : inputs) node->parents.push_back(v.node());
    node->backward = std::forward<Fn>(backward);
  }
  return Var<S>::from_node(std::move(node));
}

// Gradient accumulator of parent `i`, or nullptr if it does not need one.
template <typename S>
Tensor<S>* acc(NodeT<S>& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return &p->grad_buffer();
}

template <typename S>
const Tensor<S>& parent_value(const NodeT<S>& self, std::size_t i) {
  return self.parents[i]->value;
}

// ---------------------------------------------------------------------------
// Broadcast binary ops

enum class Bcast { kSame, kTrailing, kLeading };

struct BinaryLayout {
  Bcast mode;
  std::size_t outer;
  std::size_t inner;
};

BinaryLayout layout(const char* op, const Shape& a, const Shape& b, bool leading) {
  if (a == b) return {Bcast::kSame, 1, num_elements(a)};
  if (b.size() <= a.size()) {
    if (leading && std::equal(b.begin(), b.end(), a.begin())) {
      const std::size_t outer = num_elements(b);
      return {Bcast::kLeading, outer, outer == 0 ? 0 : num_elements(a) / outer};
    }
    if (!leading && std::equal(b.rbegin(), b.rend(), a.rbegin())) {
      const std::size_t inner = num_elements(b);
      return {Bcast::kTrailing, inner == 0 ? 0 : num_elements(a) / inner, inner};
    }
  }
  throw ShapeError(op, a, b);
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

template <typename S>
Var<S> binary(const char* name, BinOp op, const Var<S>& a, const Var<S>& b, bool leading) {
  const BinaryLayout lay = layout(name, a.shape(), b.shape(), leading);
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  Tensor<S> out(av.shape());
  auto b_index = [lay](std::size_t o, std::size_t i) {
    switch (lay.mode) {
      case Bcast::kSame: return i;
      case Bcast::kTrailing: return i;
      case Bcast::kLeading: return o;
    }
    return i;
  };
  for (std::size_t o = 0; o < lay.outer; ++o) {
    const S* ap = av.data() + o * lay.inner;
    S* op_ = out.data() + o * lay.inner;
    for (std::size_t i = 0; i < lay.inner; ++i) {
      const S bb = bv[b_index(o, i)];
      switch (op) {
        case BinOp::kAdd: op_[i] = ap[i] + bb; break;
        case BinOp::kSub: op_[i] = ap[i] - bb; break;
        case BinOp::kMul: op_[i] = ap[i] * bb; break;
        case BinOp::kDiv: op_[i] = ap[i] / bb; break;
      }
    }
  }
  return make_op<S>(std::move(out), {a, b}, [lay, op, b_index](NodeT<S>& self) {
    const Tensor<S>& g = self.grad;
    const Tensor<S>& av = parent_value(self, 0);
    const Tensor<S>& bv = parent_value(self, 1);
    Tensor<S>* ga = acc(self, 0);
    Tensor<S>* gb = acc(self, 1);
    for (std::size_t o = 0; o < lay.outer; ++o) {
      const std::size_t base = o * lay.inner;
      for (std::size_t i = 0; i < lay.inner; ++i) {
        const std::size_t k = base + i;
        const std::size_t bi = b_index(o, i);
        const S gk = g[k];
        switch (op) {
          case BinOp::kAdd:
            if (ga) (*ga)[k] += gk;
            if (gb) (*gb)[bi] += gk;
            break;
          case BinOp::kSub:
            if (ga) (*ga)[k] += gk;
            if (gb) (*gb)[bi] -= gk;
            break;
          case BinOp::kMul:
            if (ga) (*ga)[k] += gk * bv[bi];
            if (gb) (*gb)[bi] += gk * av[k];
            break;
          case BinOp::kDiv:
            if (ga) (*ga)[k] += gk / bv[bi];
            if (gb) (*gb)[bi] -= gk * av[k] / (bv[bi] * bv[bi]);
            break;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Permutation helper shared by forward and backward.

template <typename S>
Tensor<S> permute_values(const Tensor<S>& in, const std::vector<std::size_t>& perm) {
  const std::size_t rank = in.rank();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in.dim(perm[i]);
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in.dim(i);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) src_stride[i] = in_stride[perm[i]];

  Tensor<S> out(out_shape);
  if (out.size() == 0) return out;
  // Innermost run is contiguous when the last axis stays last.
  const bool contiguous_tail = perm.back() == rank - 1;
  const std::size_t run = contiguous_tail ? out_shape.back() : 1;
  const std::size_t outer_rank = contiguous_tail ? rank - 1 : rank;
  std::vector<std::size_t> idx(outer_rank, 0);
  std::size_t src = 0;
  S* dst = out.data();
  const S* base = in.data();
  const std::size_t count = out.size() / run;
  for (std::size_t n = 0; n < count; ++n) {
    std::copy(base + src, base + src + run, dst);
    dst += run;
    for (std::size_t ax = outer_rank; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) { return binary("add", BinOp::kAdd, a, b, false); }
template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) { return binary("sub", BinOp::kSub, a, b, false); }
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) { return binary("mul", BinOp::kMul, a, b, false); }
template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) { return binary("div", BinOp::kDiv, a, b, false); }
template <typename S>
Var<S> mul_leading(const Var<S>& a, const Var<S>& b) {
  return binary("mul_leading", BinOp::kMul, a, b, true);
}
template <typename S>
Var<S> div_leading(const Var<S>& a, const Var<S>& b) {
  return binary("div_leading", BinOp::kDiv, a, b, true);
}

template <typename S>
Var<S> scale(const Var<S>& x, S factor) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array() * factor;
  return make_op<S>(std::move(out), {x}, [factor](NodeT<S>& self) {
    acc(self, 0)->array() += self.grad.array() * factor;
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& x, S offset) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array() + offset;
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    acc(self, 0)->array() += self.grad.array();
  });
}

template <typename S>
Var<S> neg(const Var<S>& x) { return scale(x, S(-1)); }

template <typename S>
Var<S> exp(const Var<S>& x) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array().exp();
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    acc(self, 0)->array() += self.grad.array() * self.value.array();
  });
}

template <typename S>
Var<S> log(const Var<S>& x) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array().log();
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    acc(self, 0)->array() += self.grad.array() / parent_value(self, 0).array();
  });
}

template <typename S>
Var<S> sqrt(const Var<S>& x) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array().sqrt();
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    acc(self, 0)->array() += self.grad.array() / (S(2) * self.value.array());
  });
}

template <typename S>
Var<S> square(const Var<S>& x) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array().square();
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    acc(self, 0)->array() += self.grad.array() * S(2) * parent_value(self, 0).array();
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array().logistic();
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    const auto y = self.value.array();
    acc(self, 0)->array() += self.grad.array() * y * (S(1) - y);
  });
}

template <typename S>
Var<S> tanh(const Var<S>& x) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array().tanh();
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    const auto y = self.value.array();
    acc(self, 0)->array() += self.grad.array() * (S(1) - y.square());
  });
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array().max(S(0));
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    acc(self, 0)->array() +=
        (parent_value(self, 0).array() > S(0)).select(self.grad.array(), S(0));
  });
}

// ---------------------------------------------------------------------------
// Products

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), n = b.dim(1);
  Tensor<S> out({m, n});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return make_op<S>(std::move(out), {a, b}, [](NodeT<S>& self) {
    const auto g = self.grad.matrix();
    if (auto* ga = acc(self, 0)) ga->matrix().noalias() += g * parent_value(self, 1).matrix().transpose();
    if (auto* gb = acc(self, 1)) gb->matrix().noalias() += parent_value(self, 0).matrix().transpose() * g;
  });
}

template <typename S>
Var<S> bmm(const Var<S>& a, const Var<S>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) throw ShapeError("bmm", a.shape(), b.shape());
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (bk != k) throw ShapeError("bmm", a.shape(), b.shape());
  Tensor<S> out({batch, m, n});
  using Map = Eigen::Map<Mat<S>>;
  using CMap = Eigen::Map<const Mat<S>>;
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  for (std::size_t i = 0; i < batch; ++i) {
    CMap am(a.value().data() + i * m * k, ei(m), ei(k));
    Map om(out.data() + i * m * n, ei(m), ei(n));
    if (transpose_b) {
      CMap bm(b.value().data() + i * n * k, ei(n), ei(k));
      om.noalias() = am * bm.transpose();
    } else {
      CMap bm(b.value().data() + i * k * n, ei(k), ei(n));
      om.noalias() = am * bm;
    }
  }
  return make_op<S>(std::move(out), {a, b}, [=](NodeT<S>& self) {
    Tensor<S>* ga = acc(self, 0);
    Tensor<S>* gb = acc(self, 1);
    const Tensor<S>& av = parent_value(self, 0);
    const Tensor<S>& bv = parent_value(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      CMap g(self.grad.data() + i * m * n, ei(m), ei(n));
      CMap am(av.data() + i * m * k, ei(m), ei(k));
      if (transpose_b) {
        CMap bm(bv.data() + i * n * k, ei(n), ei(k));
        if (ga) Map(ga->data() + i * m * k, ei(m), ei(k)).noalias() += g * bm;
        if (gb) Map(gb->data() + i * n * k, ei(n), ei(k)).noalias() += g.transpose() * am;
      } else {
        CMap bm(bv.data() + i * k * n, ei(k), ei(n));
        if (ga) Map(ga->data() + i * m * k, ei(m), ei(k)).noalias() += g * bm.transpose();
        if (gb) Map(gb->data() + i * k * n, ei(k), ei(n)).noalias() += am.transpose() * g;
      }
    }
  });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear", x.shape(), weight.shape());
  }
  const std::size_t din = weight.dim(0), dout = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout)) {
    throw ShapeError("linear bias", bias.shape(), Shape{dout});
  }
  const std::size_t rows = x.size() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<S> out(out_shape);
  auto om = out.matrix(rows, dout);
  om.noalias() = x.value().matrix(rows, din) * weight.value().matrix();
  if (bias.defined()) om.rowwise() += bias.value().matrix(1, dout).row(0);

  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op<S>(std::move(out), std::move(inputs), [rows, din, dout](NodeT<S>& self) {
    const auto g = self.grad.matrix(rows, dout);
    if (auto* gx = acc(self, 0)) {
      gx->matrix(rows, din).noalias() += g * parent_value(self, 1).matrix().transpose();
    }
    if (auto* gw = acc(self, 1)) {
      gw->matrix().noalias() += parent_value(self, 0).matrix(rows, din).transpose() * g;
    }
    if (self.parents.size() > 2) {
      if (auto* gb = acc(self, 2)) gb->matrix(1, dout).row(0) += g.colwise().sum();
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw InputError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + to_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat", ref, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) throw ShapeError("concat", ref, s);
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor<S> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t chunk = extents[k] * sp.inner;
    const S* src = parts[k].value().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.data() + o * sp.n * sp.inner + offset);
    }
    offset += chunk;
  }
  return make_op<S>(std::move(out), parts, [sp, extents](NodeT<S>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t chunk = extents[k] * sp.inner;
      if (auto* g = acc(self, k)) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const S* src = self.grad.data() + o * sp.n * sp.inner + offset;
          S* dst = g->data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

template <typename S>
Var<S> slice(const Var<S>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (begin > end || end > sp.n) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     to_string(x.shape()) + " on axis " + std::to_string(axis));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor<S> out(out_shape);
  const std::size_t chunk = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const S* src = x.value().data() + (o * sp.n + begin) * sp.inner;
    std::copy(src, src + chunk, out.data() + o * chunk);
  }
  return make_op<S>(std::move(out), {x}, [sp, begin, chunk](NodeT<S>& self) {
    Tensor<S>* g = acc(self, 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      S* dst = g->data() + (o * sp.n + begin) * sp.inner;
      const S* src = self.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

template <typename S>
Var<S> reshape(const Var<S>& x, Shape shape) {
  Tensor<S> out = x.value().reshaped(std::move(shape));
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    acc(self, 0)->array() += self.grad.array();
  });
}

template <typename S>
Var<S> flatten(const Var<S>& x, std::size_t start_axis) {
  if (start_axis >= x.rank()) throw ShapeError("flatten: start axis out of range for " + to_string(x.shape()));
  Shape s(x.shape().begin(), x.shape().begin() + static_cast<std::ptrdiff_t>(start_axis));
  s.push_back(num_elements(Shape(x.shape().begin() + static_cast<std::ptrdiff_t>(start_axis), x.shape().end())));
  return reshape(x, std::move(s));
}

template <typename S>
Var<S> permute(const Var<S>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  if (perm.size() != rank) throw ShapeError("permute: rank mismatch for " + to_string(x.shape()));
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("permute: invalid permutation for " + to_string(x.shape()));
    seen[p] = true;
  }
  std::vector<std::size_t> inverse(rank);
  for (std::size_t i = 0; i < rank; ++i) inverse[perm[i]] = i;
  return make_op<S>(permute_values(x.value(), perm), {x}, [inverse](NodeT<S>& self) {
    acc(self, 0)->array() += permute_values(self.grad, inverse).array();
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Var<S> sum(const Var<S>& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (sp.n == 0) throw DegenerateInput("sum: empty reduction axis in " + to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<S> out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.n; ++j) {
      const S* src = x.value().data() + (o * sp.n + j) * sp.inner;
      S* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return make_op<S>(std::move(out), {x}, [sp](NodeT<S>& self) {
    Tensor<S>* g = acc(self, 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const S* src = self.grad.data() + o * sp.inner;
      for (std::size_t j = 0; j < sp.n; ++j) {
        S* dst = g->data() + (o * sp.n + j) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename S>
Var<S> mean(const Var<S>& x, std::size_t axis) {
  const std::size_t n = split_axis(x.shape(), axis).n;
  if (n == 0) throw DegenerateInput("mean: empty reduction axis in " + to_string(x.shape()));
  return scale(sum(x, axis), S(1) / static_cast<S>(n));
}

template <typename S>
Var<S> stddev(const Var<S>& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (sp.n == 0) throw DegenerateInput("stddev: empty reduction axis in " + to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<S> mu(out_shape);
  Tensor<S> out(out_shape);
  const S inv_n = S(1) / static_cast<S>(sp.n);
  const S* xv = x.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      S m = 0;
      for (std::size_t j = 0; j < sp.n; ++j) m += xv[(o * sp.n + j) * sp.inner + i];
      m *= inv_n;
      S v = 0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const S d = xv[(o * sp.n + j) * sp.inner + i] - m;
        v += d * d;
      }
      mu[o * sp.inner + i] = m;
      out[o * sp.inner + i] = std::sqrt(v * inv_n);
    }
  }
  return make_op<S>(std::move(out), {x}, [sp, inv_n, mu = std::move(mu)](NodeT<S>& self) {
    Tensor<S>* g = acc(self, 0);
    const S* xv = parent_value(self, 0).data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t r = o * sp.inner + i;
        const S sd = self.value[r];
        if (sd == S(0)) continue;
        const S coeff = self.grad[r] * inv_n / sd;
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t k = (o * sp.n + j) * sp.inner + i;
          (*g)[k] += coeff * (xv[k] - mu[r]);
        }
      }
    }
  });
}

template <typename S>
Var<S> sum_all(const Var<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.value().array().sum());
  return make_op<S>(std::move(out), {x}, [](NodeT<S>& self) {
    acc(self, 0)->array() += self.grad[0];
  });
}

template <typename S>
Var<S> mean_all(const Var<S>& x) {
  if (x.size() == 0) throw DegenerateInput("mean_all: empty tensor");
  return scale(sum_all(x), S(1) / static_cast<S>(x.size()));
}

template <typename S>
Var<S> softmax(const Var<S>& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (sp.n == 0) throw DegenerateInput("softmax: empty axis in " + to_string(x.shape()));
  Tensor<S> out(x.shape());
  const S* xv = x.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      S mx = xv[base];
      for (std::size_t j = 1; j < sp.n; ++j) mx = std::max(mx, xv[base + j * sp.inner]);
      S total = 0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const S e = std::exp(xv[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= total;
    }
  }
  return make_op<S>(std::move(out), {x}, [sp](NodeT<S>& self) {
    Tensor<S>* g = acc(self, 0);
    const Tensor<S>& y = self.value;
    const Tensor<S>& gy = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.n * sp.inner + i;
        S dot = 0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += gy[base + j * sp.inner] * y[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t k = base + j * sp.inner;
          (*g)[k] += y[k] * (gy[k] - dot);
        }
      }
    }
  });
}

template <typename S>
Var<S> mean_of(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DegenerateInput("mean_of: no inputs");
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) throw ShapeError("mean_of", parts.front().shape(), p.shape());
  }
  const std::size_t count = parts.size(), size = parts.front().size();
  const S inv = S(1) / static_cast<S>(count);
  Tensor<S> out(parts.front().shape());
  std::vector<S> vals(count);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t k = 0; k < count; ++k) vals[k] = parts[k].value()[i];
    std::sort(vals.begin(), vals.end());
    S spread = 0;
    for (std::size_t k = 1; k < count; ++k) spread += vals[k] - vals[0];
    out[i] = vals[0] + spread * inv;
  }
  return make_op<S>(std::move(out), parts, [count, inv](NodeT<S>& self) {
    for (std::size_t k = 0; k < count; ++k) {
      if (auto* g = acc(self, k)) g->array() += self.grad.array() * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Fused layers

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t width = x.shape().back();
  if (width == 0) throw DegenerateInput("layer_norm: zero-width feature axis");
  if (gamma.shape() != Shape{width}) throw ShapeError("layer_norm gamma", gamma.shape(), Shape{width});
  if (beta.shape() != Shape{width}) throw ShapeError("layer_norm beta", beta.shape(), Shape{width});
  const std::size_t rows = x.size() / width;
  Tensor<S> out(x.shape());
  std::vector<S> mu(rows), rstd(rows);
  const S* gv = gamma.value().data();
  const S* bv = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = x.value().data() + r * width;
    S m = 0;
    for (std::size_t i = 0; i < width; ++i) m += xr[i];
    m /= static_cast<S>(width);
    S v = 0;
    for (std::size_t i = 0; i < width; ++i) v += (xr[i] - m) * (xr[i] - m);
    v /= static_cast<S>(width);
    const S rs = S(1) / std::sqrt(v + eps);
    mu[r] = m;
    rstd[r] = rs;
    S* yr = out.data() + r * width;
    for (std::size_t i = 0; i < width; ++i) yr[i] = (xr[i] - m) * rs * gv[i] + bv[i];
  }
  return make_op<S>(std::move(out), {x, gamma, beta},
                    [rows, width, mu = std::move(mu), rstd = std::move(rstd)](NodeT<S>& self) {
    Tensor<S>* gx = acc(self, 0);
    Tensor<S>* gg = acc(self, 1);
    Tensor<S>* gb = acc(self, 2);
    const S* xv = parent_value(self, 0).data();
    const S* gam = parent_value(self, 1).data();
    const S inv_w = S(1) / static_cast<S>(width);
    for (std::size_t r = 0; r < rows; ++r) {
      const S* xr = xv + r * width;
      const S* gr = self.grad.data() + r * width;
      S mean_gxhat = 0;
      S mean_gxhat_xhat = 0;
      for (std::size_t i = 0; i < width; ++i) {
        const S xhat = (xr[i] - mu[r]) * rstd[r];
        const S gxhat = gr[i] * gam[i];
        mean_gxhat += gxhat;
        mean_gxhat_xhat += gxhat * xhat;
        if (gg) (*gg)[i] += gr[i] * xhat;
        if (gb) (*gb)[i] += gr[i];
      }
      if (!gx) continue;
      mean_gxhat *= inv_w;
      mean_gxhat_xhat *= inv_w;
      S* dst = gx->data() + r * width;
      for (std::size_t i = 0; i < width; ++i) {
        const S xhat = (xr[i] - mu[r]) * rstd[r];
        dst[i] += rstd[r] * (gr[i] * gam[i] - mean_gxhat - xhat * mean_gxhat_xhat);
      }
    }
  });
}

template <typename S>
Var<S> outer(const Var<S>& a, const Var<S>& b, bool symmetric) {
  if (a.shape() != b.shape() || a.rank() == 0) throw ShapeError("outer", a.shape(), b.shape());
  const std::size_t p = a.shape().back();
  const std::size_t rows = a.size() / std::max<std::size_t>(p, 1);
  Shape out_shape = a.shape();
  out_shape.back() = p * p;
  Tensor<S> out(out_shape);
  using Vec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;
  using OutMap = Eigen::Map<Mat<S>>;
  const auto ep = static_cast<Eigen::Index>(p);
  for (std::size_t r = 0; r < rows; ++r) {
    Vec av(a.value().data() + r * p, ep);
    Vec bv(b.value().data() + r * p, ep);
    OutMap o(out.data() + r * p * p, ep, ep);
    o.noalias() = av * bv.transpose();
    if (symmetric) {
      // Symmetrise the stored products so swapping a and b is bit-exact.
      for (Eigen::Index i = 0; i < ep; ++i) {
        for (Eigen::Index j = i + 1; j < ep; ++j) {
          const S v = S(0.5) * (o(i, j) + o(j, i));
          o(i, j) = v;
          o(j, i) = v;
        }
      }
    }
  }
  return make_op<S>(std::move(out), {a, b}, [rows, p, symmetric](NodeT<S>& self) {
    Tensor<S>* ga = acc(self, 0);
    Tensor<S>* gb = acc(self, 1);
    const auto ep = static_cast<Eigen::Index>(p);
    using CMap = Eigen::Map<const Mat<S>>;
    using VMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
    Mat<S> gsym(ep, ep);
    for (std::size_t r = 0; r < rows; ++r) {
      CMap g(self.grad.data() + r * p * p, ep, ep);
      Vec av(parent_value(self, 0).data() + r * p, ep);
      Vec bv(parent_value(self, 1).data() + r * p, ep);
      if (symmetric) {
        gsym.noalias() = S(0.5) * (g + g.transpose());
        if (ga) VMap(ga->data() + r * p, ep).noalias() += gsym * bv;
        if (gb) VMap(gb->data() + r * p, ep).noalias() += gsym * av;
      } else {
        if (ga) VMap(ga->data() + r * p, ep).noalias() += g * bv;
        if (gb) VMap(gb->data() + r * p, ep).noalias() += g.transpose() * av;
      }
    }
  });
}

template <typename S>
Var<S> unfold_time(const Var<S>& x, std::size_t kernel) {
  if (x.rank() != 3) throw ShapeError("unfold_time expects (B,T,D), got " + to_string(x.shape()));
  if (kernel % 2 == 0) throw InputError("unfold_time: kernel width must be odd");
  const std::size_t batch = x.dim(0), steps = x.dim(1), depth = x.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  Tensor<S> out({batch, steps, kernel * depth});
  auto source = [=](std::size_t t, std::size_t j) -> std::ptrdiff_t {
    return static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t s = source(t, j);
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(steps)) continue;
        const S* src = x.value().data() + (b * steps + static_cast<std::size_t>(s)) * depth;
        std::copy(src, src + depth, out.data() + ((b * steps + t) * kernel + j) * depth);
      }
    }
  }
  return make_op<S>(std::move(out), {x}, [=](NodeT<S>& self) {
    Tensor<S>* g = acc(self, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t j = 0; j < kernel; ++j) {
          const std::ptrdiff_t s = source(t, j);
          if (s < 0 || s >= static_cast<std::ptrdiff_t>(steps)) continue;
          const S* src = self.grad.data() + ((b * steps + t) * kernel + j) * depth;
          S* dst = g->data() + (b * steps + static_cast<std::size_t>(s)) * depth;
          for (std::size_t d = 0; d < depth; ++d) dst[d] += src[d];
        }
      }
    }
  });
}

template <typename S>
Var<S> lstm(const Var<S>& x, const Var<S>& w_ih, const Var<S>& w_hh, const Var<S>& bias, bool reverse) {
  if (x.rank() != 3) throw ShapeError("lstm expects (S,T,In), got " + to_string(x.shape()));
  const std::size_t seqs = x.dim(0), steps = x.dim(1), in = x.dim(2);
  if (w_hh.rank() != 2 || w_hh.dim(1) != 4 * w_hh.dim(0)) throw ShapeError("lstm w_hh " + to_string(w_hh.shape()));
  const std::size_t hid = w_hh.dim(0);
  if (w_ih.shape() != Shape{in, 4 * hid}) throw ShapeError("lstm w_ih", w_ih.shape(), Shape{in, 4 * hid});
  if (bias.shape() != Shape{4 * hid}) throw ShapeError("lstm bias", bias.shape(), Shape{4 * hid});
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  const std::size_t g4 = 4 * hid;

  // Time-major caches: gates (post-activation) and cell states.
  auto gates = std::make_shared<Mat<S>>(ei(steps * seqs), ei(g4));
  auto cells = std::make_shared<Mat<S>>(ei(steps * seqs), ei(hid));
  auto hidden = std::make_shared<Mat<S>>(ei(steps * seqs), ei(hid));

  // Input projection for all steps at once, time-major.
  Mat<S> xt(ei(steps * seqs), ei(in));
  const S* xv = x.value().data();
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy(xv + (s * steps + t) * in, xv + (s * steps + t + 1) * in, xt.data() + (t * seqs + s) * in);
    }
  }
  gates->noalias() = xt * w_ih.value().matrix();
  gates->rowwise() += bias.value().matrix(1, g4).row(0);

  const auto whh = w_hh.value().matrix();
  Mat<S> h_prev = Mat<S>::Zero(ei(seqs), ei(hid));
  Mat<S> c_prev = Mat<S>::Zero(ei(seqs), ei(hid));
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    auto gt = gates->middleRows(ei(t * seqs), ei(seqs));
    gt.noalias() += h_prev * whh;
    gt.leftCols(ei(2 * hid)) = gt.leftCols(ei(2 * hid)).array().logistic();
    gt.middleCols(ei(2 * hid), ei(hid)) = gt.middleCols(ei(2 * hid), ei(hid)).array().tanh();
    gt.rightCols(ei(hid)) = gt.rightCols(ei(hid)).array().logistic();
    auto ct = cells->middleRows(ei(t * seqs), ei(seqs));
    ct.array() = gt.middleCols(ei(hid), ei(hid)).array() * c_prev.array() +
                 gt.leftCols(ei(hid)).array() * gt.middleCols(ei(2 * hid), ei(hid)).array();
    auto ht = hidden->middleRows(ei(t * seqs), ei(seqs));
    ht.array() = gt.rightCols(ei(hid)).array() * ct.array().tanh();
    h_prev = ht;
    c_prev = ct;
  }

  Tensor<S> out({seqs, steps, hid});
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t t = 0; t < steps; ++t) {
      const S* src = hidden->data() + (t * seqs + s) * hid;
      std::copy(src, src + hid, out.data() + (s * steps + t) * hid);
    }
  }

  return make_op<S>(std::move(out), {x, w_ih, w_hh, bias},
                    [=, xt = std::make_shared<Mat<S>>(std::move(xt))](NodeT<S>& self) {
    const auto whh = parent_value(self, 2).matrix();
    // Gradient w.r.t. outputs, time-major.
    Mat<S> gh_out(ei(steps * seqs), ei(hid));
    for (std::size_t s = 0; s < seqs; ++s) {
      for (std::size_t t = 0; t < steps; ++t) {
        const S* src = self.grad.data() + (s * steps + t) * hid;
        std::copy(src, src + hid, gh_out.data() + (t * seqs + s) * hid);
      }
    }
    Mat<S> dpre(ei(steps * seqs), ei(g4));
    using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat<S> dh_next = Mat<S>::Zero(ei(seqs), ei(hid));
    Arr dc_next = Arr::Zero(ei(seqs), ei(hid));
    const Arr zeros = Arr::Zero(ei(seqs), ei(hid));
    Arr dh(ei(seqs), ei(hid)), tc(ei(seqs), ei(hid)), dc(ei(seqs), ei(hid));
    for (std::size_t k = steps; k-- > 0;) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      const std::size_t tp = reverse ? t + 1 : t - 1;  // previous step in processing order
      auto gt = gates->middleRows(ei(t * seqs), ei(seqs));
      auto ct = cells->middleRows(ei(t * seqs), ei(seqs)).array();
      const auto ig = gt.leftCols(ei(hid)).array();
      const auto fg = gt.middleCols(ei(hid), ei(hid)).array();
      const auto gg = gt.middleCols(ei(2 * hid), ei(hid)).array();
      const auto og = gt.rightCols(ei(hid)).array();

      dh = gh_out.middleRows(ei(t * seqs), ei(seqs)).array() + dh_next.array();
      tc = ct.tanh();
      dc = dh * og * (S(1) - tc.square()) + dc_next;
      auto dp = dpre.middleRows(ei(t * seqs), ei(seqs));
      dp.leftCols(ei(hid)).array() = dc * gg * ig * (S(1) - ig);
      if (k == 0) {
        dp.middleCols(ei(hid), ei(hid)).array() = zeros;
      } else {
        dp.middleCols(ei(hid), ei(hid)).array() =
            dc * cells->middleRows(ei(tp * seqs), ei(seqs)).array() * fg * (S(1) - fg);
      }
      dp.middleCols(ei(2 * hid), ei(hid)).array() = dc * ig * (S(1) - gg.square());
      dp.rightCols(ei(hid)).array() = dh * tc * og * (S(1) - og);
      dc_next = dc * fg;
      dh_next.noalias() = dp * whh.transpose();
    }
    if (auto* gx = acc(self, 0)) {
      Mat<S> dx = dpre * parent_value(self, 1).matrix().transpose();
      for (std::size_t s = 0; s < seqs; ++s) {
        for (std::size_t t = 0; t < steps; ++t) {
          const S* src = dx.data() + (t * seqs + s) * in;
          S* dst = gx->data() + (s * steps + t) * in;
          for (std::size_t i = 0; i < in; ++i) dst[i] += src[i];
        }
      }
    }
    if (auto* gw = acc(self, 1)) gw->matrix().noalias() += xt->transpose() * dpre;
    if (auto* gw = acc(self, 2); gw && steps > 1) {
      // Every step but the first pairs with the hidden state one step earlier,
      // which in time-major layout is a fixed row offset.
      const auto rows = ei((steps - 1) * seqs);
      if (reverse) {
        gw->matrix().noalias() += hidden->bottomRows(rows).transpose() * dpre.topRows(rows);
      } else {
        gw->matrix().noalias() += hidden->topRows(rows).transpose() * dpre.bottomRows(rows);
      }
    }
    if (auto* gb = acc(self, 3)) gb->matrix(1, g4).row(0) += dpre.colwise().sum();
  });
}

template <typename S>
Var<S> frame_signal(const Var<S>& x, std::size_t frame, std::size_t hop) {
  if (x.rank() != 2) throw ShapeError("frame_signal expects (B,N), got " + to_string(x.shape()));
  if (frame == 0 || hop == 0) throw InputError("frame_signal: frame and hop must be positive");
  const std::size_t batch = x.dim(0), n = x.dim(1);
  if (n < frame) throw ShapeError("frame_signal: signal length " + std::to_string(n) + " < frame " + std::to_string(frame));
  const std::size_t frames = 1 + (n - frame) / hop;
  Tensor<S> out({batch, frames, frame});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < frames; ++t) {
      const S* src = x.value().data() + b * n + t * hop;
      std::copy(src, src + frame, out.data() + (b * frames + t) * frame);
    }
  }
  return make_op<S>(std::move(out), {x}, [=](NodeT<S>& self) {
    Tensor<S>* g = acc(self, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < frames; ++t) {
        const S* src = self.grad.data() + (b * frames + t) * frame;
        S* dst = g->data() + b * n + t * hop;
        for (std::size_t i = 0; i < frame; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename S>
Var<S> overlap_add(const Var<S>& frames, std::size_t hop, std::size_t length) {
  if (frames.rank() != 3) throw ShapeError("overlap_add expects (B,T,frame), got " + to_string(frames.shape()));
  const std::size_t batch = frames.dim(0), count = frames.dim(1), width = frames.dim(2);
  Tensor<S> out({batch, length});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < count; ++t) {
      const S* src = frames.value().data() + (b * count + t) * width;
      S* dst = out.data() + b * length;
      for (std::size_t i = 0; i < width && t * hop + i < length; ++i) dst[t * hop + i] += src[i];
    }
  }
  return make_op<S>(std::move(out), {frames}, [=](NodeT<S>& self) {
    Tensor<S>* g = acc(self, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < count; ++t) {
        const S* src = self.grad.data() + b * length;
        S* dst = g->data() + (b * count + t) * width;
        for (std::size_t i = 0; i < width && t * hop + i < length; ++i) dst[i] += src[t * hop + i];
      }
    }
  });
}

// ---------------------------------------------------------------------------

#define MVTF_INSTANTIATE_OPS(S)                                                              \
  template Var<S> add(const Var<S>&, const Var<S>&);                                         \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                         \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                         \
  template Var<S> div(const Var<S>&, const Var<S>&);                                         \
  template Var<S> mul_leading(const Var<S>&, const Var<S>&);                                 \
  template Var<S> div_leading(const Var<S>&, const Var<S>&);                                 \
  template Var<S> scale(const Var<S>&, S);                                                   \
  template Var<S> add_scalar(const Var<S>&, S);                                              \
  template Var<S> neg(const Var<S>&);                                                        \
  template Var<S> exp(const Var<S>&);                                                        \
  template Var<S> log(const Var<S>&);                                                        \
  template Var<S> sqrt(const Var<S>&);                                                       \
  template Var<S> square(const Var<S>&);                                                     \
  template Var<S> sigmoid(const Var<S>&);                                                    \
  template Var<S> tanh(const Var<S>&);                                                       \
  template Var<S> relu(const Var<S>&);                                                       \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                      \
  template Var<S> bmm(const Var<S>&, const Var<S>&, bool);                                   \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                       \
  template Var<S> concat(const std::vector<Var<S>>&, std::size_t);                           \
  template Var<S> slice(const Var<S>&, std::size_t, std::size_t, std::size_t);               \
  template Var<S> reshape(const Var<S>&, Shape);                                             \
  template Var<S> flatten(const Var<S>&, std::size_t);                                       \
  template Var<S> permute(const Var<S>&, const std::vector<std::size_t>&);                   \
  template Var<S> sum(const Var<S>&, std::size_t);                                           \
  template Var<S> mean(const Var<S>&, std::size_t);                                          \
  template Var<S> stddev(const Var<S>&, std::size_t);                                        \
  template Var<S> sum_all(const Var<S>&);                                                    \
  template Var<S> mean_all(const Var<S>&);                                                   \
  template Var<S> softmax(const Var<S>&, std::size_t);                                       \
  template Var<S> mean_of(const std::vector<Var<S>>&);                                       \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                \
  template Var<S> outer(const Var<S>&, const Var<S>&, bool);                                 \
  template Var<S> unfold_time(const Var<S>&, std::size_t);                                   \
  template Var<S> lstm(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, bool);    \
  template Var<S> frame_signal(const Var<S>&, std::size_t, std::size_t);                     \
  template Var<S> overlap_add(const Var<S>&, std::size_t, std::size_t);

MVTF_INSTANTIATE_OPS(float)
MVTF_INSTANTIATE_OPS(double)

}  // namespace mvtf
