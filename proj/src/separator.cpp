// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/separator.hpp"

namespace mvtf {
namespace {

// (B,C,T,F) <-> (B,T,F,C)
template <typename S>
Var<S> to_channels_last(const Var<S>& x) {
  return permute(x, {0, 2, 3, 1});
}

template <typename S>
Var<S> to_channels_first(const Var<S>& x) {
  return permute(x, {0, 3, 1, 2});
}

template <typename S>
Var<S> add_channel_axis(const Var<S>& x) {
  Shape s = x.shape();
  s.push_back(1);
  return reshape(x, s);
}

}  // namespace

template <typename S>
Var<S> fuse_audio_visual(const Var<S>& audio, const Var<S>& visual) {
  if (audio.rank() != 4 || audio.dim(1) != 2 || visual.rank() != 3 || audio.dim(0) != visual.dim(0) ||
      audio.dim(2) != visual.dim(1) || audio.dim(3) != visual.dim(2)) {
    throw ShapeError("fuse_audio_visual", audio.shape(), visual.shape());
  }
  return concat<S>({audio, reshape(visual, {visual.dim(0), 1, visual.dim(1), visual.dim(2)})}, 1);
}

template <typename S>
GridBlockParams<S> GridBlockParams<S>::init(std::size_t channels, std::size_t rnn_hidden, Rng& rng) {
  GridBlockParams p;
  p.freq_norm = LayerNormParams<S>::init(channels);
  p.freq_fwd = LstmParams<S>::init(channels, rnn_hidden, rng);
  p.freq_bwd = LstmParams<S>::init(channels, rnn_hidden, rng);
  p.time_norm = LayerNormParams<S>::init(2 * rnn_hidden);
  p.time_rnn = LstmParams<S>::init(2 * rnn_hidden, rnn_hidden, rng);
  p.merge = LinearParams<S>::init(rnn_hidden, channels, rng);
  return p;
}

template <typename S>
void GridBlockParams<S>::collect(const std::string& prefix, ParamList<S>& out) const {
  freq_norm.collect(prefix + ".freq_norm", out);
  freq_fwd.collect(prefix + ".freq_fwd", out);
  freq_bwd.collect(prefix + ".freq_bwd", out);
  time_norm.collect(prefix + ".time_norm", out);
  time_rnn.collect(prefix + ".time_rnn", out);
  merge.collect(prefix + ".merge", out);
}

template <typename S>
Var<S> grid_block_cl(const Var<S>& x, const GridBlockParams<S>& p) {
  if (x.rank() != 4 || x.dim(3) != p.channels()) {
    throw ShapeError("grid_block: expected (B,T,F," + std::to_string(p.channels()) + "), got " + to_string(x.shape()));
  }
  const std::size_t b = x.dim(0), t = x.dim(1), f = x.dim(2), h = x.dim(3);
  const std::size_t r = p.time_rnn.hidden();

  // Across frequency, one sequence per (item, frame).
  const Var<S> rows = reshape(p.freq_norm(x), {b * t, f, h});
  const Var<S> freq = concat<S>({p.freq_fwd(rows), p.freq_bwd(rows, /*reverse=*/true)}, 2);

  // Across time, one sequence per (item, bin).
  const Var<S> normed = p.time_norm(reshape(freq, {b, t, f, 2 * r}));
  const Var<S> cols = reshape(permute(normed, {0, 2, 1, 3}), {b * f, t, 2 * r});
  const Var<S> time = permute(reshape(p.time_rnn(cols), {b, f, t, r}), {0, 2, 1, 3});

  return add(x, p.merge(time));
}

template <typename S>
Var<S> grid_block(const Var<S>& x, const GridBlockParams<S>& p) {
  if (x.rank() != 4) throw ShapeError("grid_block: expected (B,H,T,F), got " + to_string(x.shape()));
  return to_channels_first(grid_block_cl(to_channels_last(x), p));
}

template <typename S>
SeparatorParams<S> SeparatorParams<S>::init(std::size_t channels, std::size_t rnn_hidden, std::size_t blocks,
                                            Rng& rng) {
  if (blocks == 0) throw ConfigError("separator needs at least one grid block");
  SeparatorParams p;
  p.in_proj = LinearParams<S>::init(3, channels, rng);
  for (std::size_t i = 0; i < blocks; ++i) p.blocks.push_back(GridBlockParams<S>::init(channels, rnn_hidden, rng));
  p.out_proj = LinearParams<S>::init(channels, 2, rng);
  return p;
}

template <typename S>
void SeparatorParams<S>::collect(const std::string& prefix, ParamList<S>& out) const {
  in_proj.collect(prefix + ".in_proj", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  out_proj.collect(prefix + ".out_proj", out);
}

template <typename S>
Var<S> separator_core(const Var<S>& features, const SeparatorParams<S>& p) {
  if (features.rank() != 4 || features.dim(1) != 3) {
    throw ShapeError("separator: expected (B,3,T,F), got " + to_string(features.shape()));
  }
  Var<S> h = p.in_proj(to_channels_last(features));
  for (const auto& block : p.blocks) h = grid_block_cl(h, block);
  return to_channels_first(p.out_proj(h));
}

template <typename S>
Var<S> separate(const Spectrogram<S>& mixture_spec, const Tensor<S>& sigma, std::size_t length,
                const ViewSet<S>& views, const FusionParams<S>& fusion, const SeparatorParams<S>& sep,
                const StftConfig& stft_cfg, std::uint64_t role_seed) {
  const Var<S> real = Var<S>::constant(mixture_spec.real);
  const Var<S> imag = Var<S>::constant(mixture_spec.imag);
  const Var<S> visual = fuse(views, fusion, role_seed);
  if (visual.shape() != real.shape()) throw ShapeError("separate: fused views vs spectrogram", visual.shape(), real.shape());

  // Channels-last assembly avoids two permutes of the full feature map.
  const Var<S> features_cl = concat<S>({add_channel_axis(real), add_channel_axis(imag), add_channel_axis(visual)}, 3);
  Var<S> h = sep.in_proj(features_cl);
  for (const auto& block : sep.blocks) h = grid_block_cl(h, block);
  const Var<S> est = sep.out_proj(h);  // (B,T,F,2)

  const auto squeeze = [](const Var<S>& v) { return reshape(v, {v.dim(0), v.dim(1), v.dim(2)}); };
  const Var<S> est_real = squeeze(slice(est, 3, 0, 1));
  const Var<S> est_imag = squeeze(slice(est, 3, 1, 2));
  const Var<S> wave = istft(est_real, est_imag, stft_cfg, length);
  return mul_leading(wave, Var<S>::constant(sigma));
}

template <typename S>
Var<S> separate(const AudioBatch<S>& mixture, const ViewSet<S>& views, const FusionParams<S>& fusion,
                const SeparatorParams<S>& sep, const StftConfig& stft_cfg, std::uint64_t role_seed) {
  return separate(stft(mixture, stft_cfg), mixture.sigma, mixture.original_length, views, fusion, sep, stft_cfg,
                  role_seed);
}

#define MVTF_INSTANTIATE_SEPARATOR(S)                                                                        \
  template Var<S> fuse_audio_visual(const Var<S>&, const Var<S>&);                                          \
  template struct GridBlockParams<S>;                                                                       \
  template Var<S> grid_block_cl(const Var<S>&, const GridBlockParams<S>&);                                  \
  template Var<S> grid_block(const Var<S>&, const GridBlockParams<S>&);                                     \
  template struct SeparatorParams<S>;                                                                       \
  template Var<S> separator_core(const Var<S>&, const SeparatorParams<S>&);                                 \
  template Var<S> separate(const Spectrogram<S>&, const Tensor<S>&, std::size_t, const ViewSet<S>&,         \
                           const FusionParams<S>&, const SeparatorParams<S>&, const StftConfig&, std::uint64_t); \
  template Var<S> separate(const AudioBatch<S>&, const ViewSet<S>&, const FusionParams<S>&,                 \
                           const SeparatorParams<S>&, const StftConfig&, std::uint64_t);

MVTF_INSTANTIATE_SEPARATOR(float)
MVTF_INSTANTIATE_SEPARATOR(double)

}  // namespace mvtf
