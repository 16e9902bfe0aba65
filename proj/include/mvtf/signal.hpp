// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "mvtf/autodiff.hpp"

namespace mvtf {

inline constexpr int kSampleRate = 16000;

/// Square-root periodic Hann analysis window; the synthesis window is the
/// same shape rescaled so that analysis x synthesis overlap-adds to one.
struct StftConfig {
  std::size_t n_fft = 256;
  std::size_t hop = 128;
  std::vector<double> window;

  static StftConfig sqrt_hann(std::size_t n_fft = 256, std::size_t hop = 128);

  std::size_t bins() const { return n_fft / 2 + 1; }
  std::size_t frames(std::size_t length) const;
  std::vector<double> synthesis_window() const;
  /// Sample range [first, last) fully covered by overlapping frames, where
  /// istft(stft(x)) reproduces x.
  std::pair<std::size_t, std::size_t> valid_range(std::size_t length) const;
  void validate() const;
};

template <typename S>
struct AudioBatch {
  Tensor<S> waveform;  // (B,N), unit population std per item
  Tensor<S> sigma;     // (B)
  std::size_t original_length = 0;
};

template <typename S>
struct Spectrogram {
  Tensor<S> real;  // (B,T,F)
  Tensor<S> imag;  // (B,T,F)
};

/// Divides each item by its population standard deviation. No mean removal.
template <typename S>
AudioBatch<S> normalize_mixture(const Tensor<S>& x);

/// Differentiable one-sided STFT without centre padding. (B,N) -> real, imag (B,T,F).
template <typename S>
std::pair<Var<S>, Var<S>> stft(const Var<S>& waveform, const StftConfig& cfg);

/// Differentiable weighted overlap-add inverse. real, imag (B,T,F) -> (B,length).
template <typename S>
Var<S> istft(const Var<S>& real, const Var<S>& imag, const StftConfig& cfg, std::size_t length);

template <typename S>
Spectrogram<S> stft(const AudioBatch<S>& audio, const StftConfig& cfg);

template <typename S>
Tensor<S> istft(const Spectrogram<S>& spec, const StftConfig& cfg, std::size_t length);

/// (B,T,F) pair -> (B,2,T,F), channel 0 real, channel 1 imaginary.
template <typename S>
Tensor<S> pack_spectrogram(const Spectrogram<S>& spec);

template <typename S>
Spectrogram<S> unpack_spectrogram(const Tensor<S>& packed);

inline constexpr double kSiSdrCap = 60.0;

/// Scale-invariant SDR in dB, clamped to [-60, 60]. A zero reference throws
/// DegenerateInput; a zero estimate yields -60.
template <typename S>
double si_sdr(std::span<const S> estimate, std::span<const S> reference);

/// Negative batch-mean SI-SDR, uncapped and differentiable. est, ref: (B,N).
template <typename S>
Var<S> si_sdr_loss(const Var<S>& estimate, const Var<S>& reference);

}  // namespace mvtf
