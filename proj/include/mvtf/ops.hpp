// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <vector>

#include "mvtf/autodiff.hpp"

/// Differentiable primitives. Every function records a backward rule when
/// any input requires a gradient (and no NoGradGuard is alive).
///
/// Binary element-wise ops accept `b` with the same shape as `a`, a rank-0
/// scalar, or a shape equal to the trailing extents of `a` (bias-style
/// broadcast). The `_leading` variants broadcast `b` over the trailing axes
/// instead, i.e. `b` matches the leading extents of `a`.
namespace mvtf {

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> div(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul_leading(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> div_leading(const Var<S>& a, const Var<S>& b);

template <typename S> Var<S> scale(const Var<S>& x, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& x, S offset);
template <typename S> Var<S> neg(const Var<S>& x);
template <typename S> Var<S> exp(const Var<S>& x);
template <typename S> Var<S> log(const Var<S>& x);
template <typename S> Var<S> sqrt(const Var<S>& x);
template <typename S> Var<S> square(const Var<S>& x);
template <typename S> Var<S> sigmoid(const Var<S>& x);
template <typename S> Var<S> tanh(const Var<S>& x);
template <typename S> Var<S> relu(const Var<S>& x);

/// (M,K) x (K,N) -> (M,N).
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// (B,M,K) x (B,K,N) -> (B,M,N); with `transpose_b`, b is (B,N,K).
template <typename S> Var<S> bmm(const Var<S>& a, const Var<S>& b, bool transpose_b = false);
/// x W + bias over the last axis: (...,Din) x (Din,Dout) -> (...,Dout). `bias` may be undefined.
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);

template <typename S> Var<S> concat(const std::vector<Var<S>>& parts, std::size_t axis);
template <typename S> Var<S> slice(const Var<S>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename S> Var<S> reshape(const Var<S>& x, Shape shape);
/// Collapses axes [start_axis, rank) into one.
template <typename S> Var<S> flatten(const Var<S>& x, std::size_t start_axis = 1);
template <typename S> Var<S> permute(const Var<S>& x, const std::vector<std::size_t>& perm);

template <typename S> Var<S> sum(const Var<S>& x, std::size_t axis);
template <typename S> Var<S> mean(const Var<S>& x, std::size_t axis);
/// Population standard deviation along `axis`.
template <typename S> Var<S> stddev(const Var<S>& x, std::size_t axis);
template <typename S> Var<S> sum_all(const Var<S>& x);
template <typename S> Var<S> mean_all(const Var<S>& x);
template <typename S> Var<S> softmax(const Var<S>& x, std::size_t axis);

/// Element-wise mean of same-shape tensors, evaluated in a canonical order
/// (ascending per element, anchored at the minimum) so the result is
/// bit-identical under any reordering of `parts` and equals the common value
/// exactly when all parts agree.
template <typename S> Var<S> mean_of(const std::vector<Var<S>>& parts);

/// (x - mean) / sqrt(var + eps) * gamma + beta over the last axis.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5));

/// Per-row outer product of (...,P) operands flattened row-major to (...,P*P).
/// With `symmetric`, returns (a(x)b + b(x)a) / 2.
template <typename S> Var<S> outer(const Var<S>& a, const Var<S>& b, bool symmetric = false);

/// (B,T,D) -> (B,T,k*D): zero-padded temporal neighbourhoods for an odd-width convolution.
template <typename S> Var<S> unfold_time(const Var<S>& x, std::size_t kernel);

/// Single-layer LSTM over (S,T,In) with zero initial state; gate order i,f,g,o.
/// w_ih: (In,4H), w_hh: (H,4H), bias: (4H). Returns hidden states (S,T,H).
template <typename S>
Var<S> lstm(const Var<S>& x, const Var<S>& w_ih, const Var<S>& w_hh, const Var<S>& bias,
            bool reverse = false);

/// (B,N) -> (B,T,frame) with T = 1 + (N - frame) / hop.
template <typename S> Var<S> frame_signal(const Var<S>& x, std::size_t frame, std::size_t hop);
/// Adjoint of frame_signal: (B,T,frame) -> (B,length), summing overlaps.
template <typename S> Var<S> overlap_add(const Var<S>& frames, std::size_t hop, std::size_t length);

}  // namespace mvtf
