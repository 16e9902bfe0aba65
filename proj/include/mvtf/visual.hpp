// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "mvtf/nn.hpp"
#include "mvtf/tensor_io.hpp"

namespace mvtf {

inline constexpr double kVideoFps = 25.0;

/// The seven camera angles, front first.
inline constexpr std::array<std::string_view, 7> kViewLabels{
    "front", "top", "down", "left30", "left60", "right30", "right60"};

bool is_known_view(std::string_view label);

/// 0 for front, 3 for top; see SynthConfig.
int view_difficulty(std::string_view label);

struct ViewEmbeddingSeq {
  TensorXd embeddings;  // (T_v, D)
  std::string view_label;
  double fps = kVideoFps;

  std::size_t frames() const { return embeddings.dim(0); }
  std::size_t dim() const { return embeddings.dim(1); }
};

/// Stand-in for a lip encoder. Every view of one utterance shares a content
/// signal (frame-rate envelope, its first difference and four band envelopes,
/// lifted to `dim` through a fixed map seeded by `content_seed`); each view then applies its
/// own invertible linear distortion, bias, and additive noise, all growing
/// with the view's difficulty:
///   front (0) < down = left30 = right30 (1) < left60 = right60 (2) < top (3).
struct SynthConfig {
  std::size_t dim = 64;
  double fps = kVideoFps;
  double noise = 0.1;        // noise std for front; scaled by (1 + difficulty)
  double distortion = 0.6;   // top-view perturbation size, in [0, 1)
  std::uint64_t content_seed = 0x4d565446;

  void validate() const;
};

ViewEmbeddingSeq synth_view_embeddings(std::span<const float> target, std::string_view view_label,
                                       const SynthConfig& cfg, std::uint64_t seed);

/// Reads a rank-2 tensor file. fps and label come from an optional sidecar
/// "<path>.json" ({"fps": .., "view_label": ..}); defaults are 25 fps and the
/// file stem.
ViewEmbeddingSeq load_embeddings(const std::filesystem::path& path);

void save_embeddings(const std::filesystem::path& path, const ViewEmbeddingSeq& seq,
                     Dtype dtype = Dtype::kFloat32);

/// Endpoint-aligned linear interpolation along time to `frames` rows.
TensorXd upsample_time(const ViewEmbeddingSeq& seq, std::size_t frames);

template <typename S>
struct ViewProjectionParams {
  Var<S> kernel;  // (k, D, F), k odd
  Var<S> bias;    // (F)

  static ViewProjectionParams init(std::size_t k, std::size_t in, std::size_t out, Rng& rng);
  std::size_t width() const { return kernel.dim(0); }
  void collect(const std::string& prefix, ParamList<S>& out) const;
};

/// Temporal convolution with symmetric zero padding: (B,T,D) -> (B,T,F).
template <typename S>
Var<S> project_to_subspace(const Var<S>& embeddings, const ViewProjectionParams<S>& p);

}  // namespace mvtf
