// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mvtf/ops.hpp"

namespace mvtf {

using Rng = std::mt19937_64;

template <typename S>
struct NamedParam {
  std::string name;
  Var<S> var;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

/// Uniform(-limit, limit) values drawn in double so that f32 and f64 models
/// initialised from the same seed agree up to rounding.
template <typename S>
Tensor<S> uniform_tensor(Shape shape, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<S> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(dist(rng));
  return t;
}

template <typename S>
struct LinearParams {
  Var<S> weight;  // (in, out)
  Var<S> bias;    // (out)

  static LinearParams init(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    return {Var<S>::parameter(uniform_tensor<S>({in, out}, limit, rng)),
            Var<S>::parameter(Tensor<S>::zeros({out}))};
  }

  Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename S>
struct LayerNormParams {
  Var<S> gamma;
  Var<S> beta;
  S eps = S(1e-5);

  static LayerNormParams init(std::size_t width) {
    return {Var<S>::parameter(Tensor<S>::ones({width})), Var<S>::parameter(Tensor<S>::zeros({width}))};
  }

  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta, eps); }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

template <typename S>
struct LstmParams {
  Var<S> w_ih;  // (in, 4H)
  Var<S> w_hh;  // (H, 4H)
  Var<S> bias;  // (4H), gate order i,f,g,o

  static LstmParams init(std::size_t in, std::size_t hidden, Rng& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
    LstmParams p{Var<S>::parameter(uniform_tensor<S>({in, 4 * hidden}, limit, rng)),
                 Var<S>::parameter(uniform_tensor<S>({hidden, 4 * hidden}, limit, rng)),
                 Var<S>::parameter(Tensor<S>::zeros({4 * hidden}))};
    // Forget-gate bias starts open.
    for (std::size_t i = hidden; i < 2 * hidden; ++i) p.bias.mutable_value()[i] = S(1);
    return p;
  }

  std::size_t hidden() const { return w_hh.dim(0); }

  /// (S,T,in) -> (S,T,H).
  Var<S> operator()(const Var<S>& x, bool reverse = false) const {
    return lstm(x, w_ih, w_hh, bias, reverse);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".w_ih", w_ih});
    out.push_back({prefix + ".w_hh", w_hh});
    out.push_back({prefix + ".bias", bias});
  }
};

}  // namespace mvtf
