// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <vector>

#include "mvtf/fusion.hpp"
#include "mvtf/signal.hpp"

namespace mvtf {

/// (B,2,T,F) audio + (B,T,F) visual -> (B,3,T,F), channels (real, imag, visual).
template <typename S>
Var<S> fuse_audio_visual(const Var<S>& audio, const Var<S>& visual);

/// Dual-path block: a bidirectional recurrence across frequency, then a
/// causal recurrence across time, merged back to H channels as a residual.
template <typename S>
struct GridBlockParams {
  LayerNormParams<S> freq_norm;  // H
  LstmParams<S> freq_fwd;        // H -> R
  LstmParams<S> freq_bwd;        // H -> R
  LayerNormParams<S> time_norm;  // 2R
  LstmParams<S> time_rnn;        // 2R -> R
  LinearParams<S> merge;         // R -> H

  static GridBlockParams init(std::size_t channels, std::size_t rnn_hidden, Rng& rng);
  std::size_t channels() const { return merge.bias.size(); }
  void collect(const std::string& prefix, ParamList<S>& out) const;
};

/// Channels-last form used inside the separator: (B,T,F,H) -> (B,T,F,H).
template <typename S>
Var<S> grid_block_cl(const Var<S>& x, const GridBlockParams<S>& p);

/// (B,H,T,F) -> (B,H,T,F).
template <typename S>
Var<S> grid_block(const Var<S>& x, const GridBlockParams<S>& p);

template <typename S>
struct SeparatorParams {
  LinearParams<S> in_proj;  // 3 -> H
  std::vector<GridBlockParams<S>> blocks;
  LinearParams<S> out_proj;  // H -> 2

  static SeparatorParams init(std::size_t channels, std::size_t rnn_hidden, std::size_t blocks, Rng& rng);
  void collect(const std::string& prefix, ParamList<S>& out) const;
};

/// Maps (B,3,T,F) features to the (B,2,T,F) target spectrogram estimate.
template <typename S>
Var<S> separator_core(const Var<S>& features, const SeparatorParams<S>& p);

/// Full forward from a precomputed mixture spectrogram and already-projected
/// views: fuse, map, invert, undo normalisation, restore length.
template <typename S>
Var<S> separate(const Spectrogram<S>& mixture_spec, const Tensor<S>& sigma, std::size_t length,
                const ViewSet<S>& views, const FusionParams<S>& fusion, const SeparatorParams<S>& sep,
                const StftConfig& stft_cfg, std::uint64_t role_seed = 0);

template <typename S>
Var<S> separate(const AudioBatch<S>& mixture, const ViewSet<S>& views, const FusionParams<S>& fusion,
                const SeparatorParams<S>& sep, const StftConfig& stft_cfg, std::uint64_t role_seed = 0);

}  // namespace mvtf
