// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mvtf/nn.hpp"

namespace mvtf {

/// Projected view features. Each member is (T,F) or (B,T,F); all members
/// share one shape.
template <typename S>
struct ViewSet {
  std::vector<Var<S>> views;
  std::vector<std::string> labels;

  std::size_t size() const { return views.size(); }
};

inline constexpr std::size_t kFusedViews = 3;

/// Cyclic repetition up to three views: [a] -> [a,a,a], [a,b] -> [a,b,a].
template <typename S>
ViewSet<S> replicate_views(const ViewSet<S>& vs, std::size_t target_count = kFusedViews);

/// Appends a constant 1 feature: (...,F) -> (...,F+1).
template <typename S>
Var<S> augment_bias(const Var<S>& o);

template <typename S>
struct MvtfParams {
  LstmParams<S> lstm;             // F -> F, shared by every view
  LayerNormParams<S> pair_norm;   // (F+1)^2
  LinearParams<S> pair_proj;      // (F+1)^2 -> F, shared by every pair

  static MvtfParams init(std::size_t features, Rng& rng);
  std::size_t features() const { return lstm.hidden(); }
  void collect(const std::string& prefix, ParamList<S>& out) const;
};

/// Unidirectional LSTM over time with zero initial state.
template <typename S>
Var<S> lstm_forward(const Var<S>& h, const MvtfParams<S>& p);

/// Symmetrised per-step outer product, flattened, normalised and projected
/// back to F features.
template <typename S>
Var<S> pair_fuse(const Var<S>& oi, const Var<S>& oj, const MvtfParams<S>& p);

/// Requires exactly three views; averages the three positional pairs.
template <typename S>
Var<S> mvtf_fuse(const ViewSet<S>& vs, const MvtfParams<S>& p);

template <typename S>
struct AddFuseParams {
  LinearParams<S> proj;  // F -> F, shared by every view

  static AddFuseParams init(std::size_t features, Rng& rng);
  void collect(const std::string& prefix, ParamList<S>& out) const;
};

template <typename S>
Var<S> projected_addition_fuse(const ViewSet<S>& vs, const AddFuseParams<S>& p);

template <typename S>
struct AttnFuseParams {
  LinearParams<S> query, key, value, out;

  static AttnFuseParams init(std::size_t features, Rng& rng);
  void collect(const std::string& prefix, ParamList<S>& out) const;
};

/// Which view plays query, key and value.
std::array<std::size_t, 3> attention_roles(std::uint64_t role_seed);

template <typename S>
struct AttentionResult {
  Var<S> output;
  Var<S> weights;  // (B, T_query, T_key)
};

template <typename S>
AttentionResult<S> attention_fuse_detailed(const ViewSet<S>& vs, const AttnFuseParams<S>& p,
                                           std::uint64_t role_seed);

template <typename S>
Var<S> attention_fuse(const ViewSet<S>& vs, const AttnFuseParams<S>& p, std::uint64_t role_seed) {
  return attention_fuse_detailed(vs, p, role_seed).output;
}

enum class FusionStrategy { kMvtf, kProjectedAddition, kAttention, kNone };

FusionStrategy parse_fusion_strategy(std::string_view name);
std::string to_string(FusionStrategy strategy);

/// Learnable state for whichever strategy is selected; the other members stay
/// empty.
template <typename S>
struct FusionParams {
  FusionStrategy strategy = FusionStrategy::kMvtf;
  MvtfParams<S> mvtf;
  AddFuseParams<S> add;
  AttnFuseParams<S> attn;

  static FusionParams init(FusionStrategy strategy, std::size_t features, Rng& rng);
  void collect(const std::string& prefix, ParamList<S>& out) const;
};

/// Replicates to three views where needed and applies the chosen strategy.
/// "none" passes the first view through untouched.
template <typename S>
Var<S> fuse(const ViewSet<S>& vs, const FusionParams<S>& p, std::uint64_t role_seed = 0);

}  // namespace mvtf
