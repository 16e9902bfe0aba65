// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/fusion.hpp"

#include <cmath>
#include <random>

namespace mvtf {
namespace {

template <typename S>
void check_views(const ViewSet<S>& vs, const char* op) {
  if (vs.views.empty()) throw InputError(std::string(op) + ": empty view set");
  if (!vs.labels.empty() && vs.labels.size() != vs.views.size()) {
    throw InputError(std::string(op) + ": labels and views differ in length");
  }
  const Shape& first = vs.views.front().shape();
  if (first.size() < 2) throw ShapeError(std::string(op) + ": views need shape (T,F) or (B,T,F), got " + to_string(first));
  for (const auto& v : vs.views) {
    if (v.shape() != first) throw ShapeError(op, first, v.shape());
  }
}

template <typename S>
void require_three(const ViewSet<S>& vs, const char* op) {
  check_views(vs, op);
  if (vs.size() != kFusedViews) {
    throw InputError(std::string(op) + ": expected 3 views, got " + std::to_string(vs.size()));
  }
}

// Lifts (T,F) to (1,T,F) so sequence ops see a batch axis.
template <typename S>
Var<S> as_batch(const Var<S>& x) {
  if (x.rank() == 3) return x;
  if (x.rank() == 2) return reshape(x, {1, x.dim(0), x.dim(1)});
  throw ShapeError("expected (T,F) or (B,T,F), got " + to_string(x.shape()));
}

template <typename S>
Var<S> restore(const Var<S>& y, const Shape& like) {
  if (like.size() == 3) return y;
  return reshape(y, {y.dim(1), y.dim(2)});
}

}  // namespace

template <typename S>
ViewSet<S> replicate_views(const ViewSet<S>& vs, std::size_t target_count) {
  check_views(vs, "replicate_views");
  if (vs.size() > target_count) {
    throw InputError("replicate_views: " + std::to_string(vs.size()) + " views exceed " +
                     std::to_string(target_count));
  }
  ViewSet<S> out;
  for (std::size_t i = 0; i < target_count; ++i) {
    out.views.push_back(vs.views[i % vs.size()]);
    if (!vs.labels.empty()) out.labels.push_back(vs.labels[i % vs.size()]);
  }
  return out;
}

template <typename S>
Var<S> augment_bias(const Var<S>& o) {
  if (o.rank() == 0) throw ShapeError("augment_bias: scalar input");
  Shape ones_shape = o.shape();
  ones_shape.back() = 1;
  return concat<S>({o, Var<S>::constant(Tensor<S>::ones(ones_shape))}, o.rank() - 1);
}

template <typename S>
MvtfParams<S> MvtfParams<S>::init(std::size_t features, Rng& rng) {
  const std::size_t aug = (features + 1) * (features + 1);
  MvtfParams p;
  p.lstm = LstmParams<S>::init(features, features, rng);
  p.pair_norm = LayerNormParams<S>::init(aug);
  p.pair_proj = LinearParams<S>::init(aug, features, rng);
  return p;
}

template <typename S>
void MvtfParams<S>::collect(const std::string& prefix, ParamList<S>& out) const {
  lstm.collect(prefix + ".lstm", out);
  pair_norm.collect(prefix + ".pair_norm", out);
  pair_proj.collect(prefix + ".pair_proj", out);
}

template <typename S>
Var<S> lstm_forward(const Var<S>& h, const MvtfParams<S>& p) {
  if (h.rank() < 2 || h.shape().back() != p.lstm.hidden()) {
    throw ShapeError("lstm_forward", h.shape(), p.lstm.w_hh.shape());
  }
  return restore(p.lstm(as_batch(h)), h.shape());
}

template <typename S>
Var<S> pair_fuse(const Var<S>& oi, const Var<S>& oj, const MvtfParams<S>& p) {
  if (oi.shape() != oj.shape()) throw ShapeError("pair_fuse", oi.shape(), oj.shape());
  const std::size_t aug = p.features() + 1;
  if (oi.rank() == 0 || oi.shape().back() != aug) {
    throw ShapeError("pair_fuse: expected last axis " + std::to_string(aug) + ", got " + to_string(oi.shape()));
  }
  return p.pair_proj(p.pair_norm(outer(oi, oj, /*symmetric=*/true)));
}

template <typename S>
Var<S> mvtf_fuse(const ViewSet<S>& vs, const MvtfParams<S>& p) {
  require_three(vs, "mvtf_fuse");
  // Each view runs separately so identical views give bit-identical outputs.
  std::vector<Var<S>> aug;
  for (const auto& v : vs.views) aug.push_back(augment_bias(lstm_forward(v, p)));
  return mean_of<S>({pair_fuse(aug[0], aug[1], p), pair_fuse(aug[0], aug[2], p), pair_fuse(aug[1], aug[2], p)});
}

template <typename S>
AddFuseParams<S> AddFuseParams<S>::init(std::size_t features, Rng& rng) {
  return {LinearParams<S>::init(features, features, rng)};
}

template <typename S>
void AddFuseParams<S>::collect(const std::string& prefix, ParamList<S>& out) const {
  proj.collect(prefix + ".proj", out);
}

template <typename S>
Var<S> projected_addition_fuse(const ViewSet<S>& vs, const AddFuseParams<S>& p) {
  require_three(vs, "projected_addition_fuse");
  std::vector<Var<S>> parts;
  for (const auto& v : vs.views) parts.push_back(p.proj(v));
  return mean_of(parts);
}

template <typename S>
AttnFuseParams<S> AttnFuseParams<S>::init(std::size_t features, Rng& rng) {
  AttnFuseParams p;
  p.query = LinearParams<S>::init(features, features, rng);
  p.key = LinearParams<S>::init(features, features, rng);
  p.value = LinearParams<S>::init(features, features, rng);
  p.out = LinearParams<S>::init(features, features, rng);
  return p;
}

template <typename S>
void AttnFuseParams<S>::collect(const std::string& prefix, ParamList<S>& out_list) const {
  query.collect(prefix + ".query", out_list);
  key.collect(prefix + ".key", out_list);
  value.collect(prefix + ".value", out_list);
  out.collect(prefix + ".out", out_list);
}

std::array<std::size_t, 3> attention_roles(std::uint64_t role_seed) {
  std::array<std::size_t, 3> roles{0, 1, 2};
  Rng rng(role_seed);
  // Fisher-Yates with explicit modulo draws keeps the permutation portable.
  for (std::size_t i = roles.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(roles[i], roles[j]);
  }
  return roles;
}

template <typename S>
AttentionResult<S> attention_fuse_detailed(const ViewSet<S>& vs, const AttnFuseParams<S>& p,
                                           std::uint64_t role_seed) {
  require_three(vs, "attention_fuse");
  const auto roles = attention_roles(role_seed);
  const Var<S> q = p.query(as_batch(vs.views[roles[0]]));
  const Var<S> k = p.key(as_batch(vs.views[roles[1]]));
  const Var<S> v = p.value(as_batch(vs.views[roles[2]]));
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(q.shape().back()));
  const Var<S> weights = softmax(scale(bmm(q, k, /*transpose_b=*/true), inv_sqrt), 2);
  const Var<S> out = p.out(bmm(weights, v));
  return {restore(out, vs.views.front().shape()), weights};
}

FusionStrategy parse_fusion_strategy(std::string_view name) {
  if (name == "mvtf") return FusionStrategy::kMvtf;
  if (name == "projected_addition") return FusionStrategy::kProjectedAddition;
  if (name == "attention") return FusionStrategy::kAttention;
  if (name == "none") return FusionStrategy::kNone;
  throw ConfigError("unknown fusion strategy '" + std::string(name) +
                    "' (expected mvtf, projected_addition, attention or none)");
}

std::string to_string(FusionStrategy strategy) {
  switch (strategy) {
    case FusionStrategy::kMvtf: return "mvtf";
    case FusionStrategy::kProjectedAddition: return "projected_addition";
    case FusionStrategy::kAttention: return "attention";
    case FusionStrategy::kNone: return "none";
  }
  return "unknown";
}

template <typename S>
FusionParams<S> FusionParams<S>::init(FusionStrategy strategy, std::size_t features, Rng& rng) {
  FusionParams p;
  p.strategy = strategy;
  switch (strategy) {
    case FusionStrategy::kMvtf: p.mvtf = MvtfParams<S>::init(features, rng); break;
    case FusionStrategy::kProjectedAddition: p.add = AddFuseParams<S>::init(features, rng); break;
    case FusionStrategy::kAttention: p.attn = AttnFuseParams<S>::init(features, rng); break;
    case FusionStrategy::kNone: break;
  }
  return p;
}

template <typename S>
void FusionParams<S>::collect(const std::string& prefix, ParamList<S>& out) const {
  switch (strategy) {
    case FusionStrategy::kMvtf: mvtf.collect(prefix + ".mvtf", out); break;
    case FusionStrategy::kProjectedAddition: add.collect(prefix + ".add", out); break;
    case FusionStrategy::kAttention: attn.collect(prefix + ".attn", out); break;
    case FusionStrategy::kNone: break;
  }
}

template <typename S>
Var<S> fuse(const ViewSet<S>& vs, const FusionParams<S>& p, std::uint64_t role_seed) {
  check_views(vs, "fuse");
  if (p.strategy == FusionStrategy::kNone) return vs.views.front();
  const ViewSet<S> full = replicate_views(vs);
  switch (p.strategy) {
    case FusionStrategy::kMvtf: return mvtf_fuse(full, p.mvtf);
    case FusionStrategy::kProjectedAddition: return projected_addition_fuse(full, p.add);
    case FusionStrategy::kAttention: return attention_fuse(full, p.attn, role_seed);
    case FusionStrategy::kNone: break;
  }
  return vs.views.front();
}

#define MVTF_INSTANTIATE_FUSION(S)                                                              \
  template ViewSet<S> replicate_views(const ViewSet<S>&, std::size_t);                          \
  template Var<S> augment_bias(const Var<S>&);                                                  \
  template struct MvtfParams<S>;                                                                \
  template Var<S> lstm_forward(const Var<S>&, const MvtfParams<S>&);                            \
  template Var<S> pair_fuse(const Var<S>&, const Var<S>&, const MvtfParams<S>&);                \
  template Var<S> mvtf_fuse(const ViewSet<S>&, const MvtfParams<S>&);                           \
  template struct AddFuseParams<S>;                                                             \
  template Var<S> projected_addition_fuse(const ViewSet<S>&, const AddFuseParams<S>&);          \
  template struct AttnFuseParams<S>;                                                            \
  template AttentionResult<S> attention_fuse_detailed(const ViewSet<S>&, const AttnFuseParams<S>&, \
                                                      std::uint64_t);                           \
  template struct FusionParams<S>;                                                              \
  template Var<S> fuse(const ViewSet<S>&, const FusionParams<S>&, std::uint64_t);

MVTF_INSTANTIATE_FUSION(float)
MVTF_INSTANTIATE_FUSION(double)

}  // namespace mvtf
