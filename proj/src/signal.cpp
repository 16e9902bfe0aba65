// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/signal.hpp"

#include <cmath>
#include <numbers>

#include "mvtf/ops.hpp"

namespace mvtf {

StftConfig StftConfig::sqrt_hann(std::size_t n_fft, std::size_t hop) {
  StftConfig cfg;
  cfg.n_fft = n_fft;
  cfg.hop = hop;
  cfg.window.resize(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft);
    cfg.window[i] = std::sqrt(0.5 - 0.5 * std::cos(phase));
  }
  cfg.validate();
  return cfg;
}

void StftConfig::validate() const {
  if (n_fft < 2 || n_fft % 2 != 0) throw ConfigError("n_fft must be even and >= 2");
  if (hop == 0 || n_fft % hop != 0 || n_fft / hop < 2) {
    throw ConfigError("hop must divide n_fft with at least 2x overlap");
  }
  if (window.size() != n_fft) throw ConfigError("window length must equal n_fft");
}

std::size_t StftConfig::frames(std::size_t length) const {
  if (length < n_fft) {
    throw ShapeError("stft: signal length " + std::to_string(length) + " shorter than n_fft " +
                     std::to_string(n_fft));
  }
  return 1 + (length - n_fft) / hop;
}

std::vector<double> StftConfig::synthesis_window() const {
  // Periodic Hann overlap-adds to n_fft / (2 hop).
  const double gain = 2.0 * static_cast<double>(hop) / static_cast<double>(n_fft);
  std::vector<double> w = window;
  for (double& v : w) v *= gain;
  return w;
}

std::pair<std::size_t, std::size_t> StftConfig::valid_range(std::size_t length) const {
  return {n_fft - hop, frames(length) * hop};
}

namespace {

template <typename S>
struct DftKernels {
  Var<S> window;       // (n)
  Var<S> synth;        // (n)
  Var<S> cos_fwd;      // (n,F)
  Var<S> sin_fwd;      // (n,F), negative sine
  Var<S> cos_inv;      // (F,n)
  Var<S> sin_inv;      // (F,n)
};

template <typename S>
DftKernels<S> make_kernels(const StftConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_fft, bins = cfg.bins();
  Tensor<S> cf({n, bins}), sf({n, bins}), ci({bins, n}), si({bins, n});
  for (std::size_t k = 0; k < bins; ++k) {
    const double weight = (k == 0 || k == n / 2) ? 1.0 : 2.0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t modulo n before forming the angle to keep the tables exact.
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      const double cs = std::cos(angle), sn = std::sin(angle);
      cf.at({t, k}) = static_cast<S>(cs);
      sf.at({t, k}) = static_cast<S>(-sn);
      ci.at({k, t}) = static_cast<S>(weight * cs / static_cast<double>(n));
      si.at({k, t}) = static_cast<S>(-weight * sn / static_cast<double>(n));
    }
  }
  const auto synth = cfg.synthesis_window();
  Tensor<S> w({n}), ws({n});
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = static_cast<S>(cfg.window[i]);
    ws[i] = static_cast<S>(synth[i]);
  }
  return {Var<S>::constant(std::move(w)), Var<S>::constant(std::move(ws)), Var<S>::constant(std::move(cf)),
          Var<S>::constant(std::move(sf)), Var<S>::constant(std::move(ci)), Var<S>::constant(std::move(si))};
}

}  // namespace

template <typename S>
AudioBatch<S> normalize_mixture(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("normalize_mixture expects (B,N), got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0), n = x.dim(1);
  AudioBatch<S> out{Tensor<S>(x.shape()), Tensor<S>({batch}), n};
  for (std::size_t b = 0; b < batch; ++b) {
    const S* src = x.data() + b * n;
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += src[i];
    m /= static_cast<double>(std::max<std::size_t>(n, 1));
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) v += (src[i] - m) * (src[i] - m);
    const double sigma = n == 0 ? 0.0 : std::sqrt(v / static_cast<double>(n));
    if (!(sigma > 0.0)) throw DegenerateInput("normalize_mixture: item " + std::to_string(b) + " has zero variance");
    out.sigma[b] = static_cast<S>(sigma);
    S* dst = out.waveform.data() + b * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<S>(src[i] / sigma);
  }
  return out;
}

template <typename S>
std::pair<Var<S>, Var<S>> stft(const Var<S>& waveform, const StftConfig& cfg) {
  if (waveform.rank() != 2) throw ShapeError("stft expects (B,N), got " + to_string(waveform.shape()));
  cfg.frames(waveform.dim(1));
  const auto k = make_kernels<S>(cfg);
  auto frames = mul(frame_signal(waveform, cfg.n_fft, cfg.hop), k.window);
  return {linear(frames, k.cos_fwd, Var<S>()), linear(frames, k.sin_fwd, Var<S>())};
}

template <typename S>
Var<S> istft(const Var<S>& real, const Var<S>& imag, const StftConfig& cfg, std::size_t length) {
  if (real.rank() != 3 || real.shape() != imag.shape()) throw ShapeError("istft", real.shape(), imag.shape());
  if (real.dim(2) != cfg.bins()) throw ShapeError("istft: " + std::to_string(real.dim(2)) + " bins, config expects " + std::to_string(cfg.bins()));
  const auto k = make_kernels<S>(cfg);
  auto frames = add(linear(real, k.cos_inv, Var<S>()), linear(imag, k.sin_inv, Var<S>()));
  return overlap_add(mul(frames, k.synth), cfg.hop, length);
}

template <typename S>
Spectrogram<S> stft(const AudioBatch<S>& audio, const StftConfig& cfg) {
  NoGradGuard guard;
  auto [re, im] = stft(Var<S>::constant(audio.waveform), cfg);
  return {re.value(), im.value()};
}

template <typename S>
Tensor<S> istft(const Spectrogram<S>& spec, const StftConfig& cfg, std::size_t length) {
  NoGradGuard guard;
  return istft(Var<S>::constant(spec.real), Var<S>::constant(spec.imag), cfg, length).value();
}

template <typename S>
Tensor<S> pack_spectrogram(const Spectrogram<S>& spec) {
  if (spec.real.shape() != spec.imag.shape() || spec.real.rank() != 3) {
    throw ShapeError("pack_spectrogram", spec.real.shape(), spec.imag.shape());
  }
  const std::size_t batch = spec.real.dim(0), plane = spec.real.dim(1) * spec.real.dim(2);
  Tensor<S> out({batch, 2, spec.real.dim(1), spec.real.dim(2)});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(spec.real.data() + b * plane, plane, out.data() + (2 * b) * plane);
    std::copy_n(spec.imag.data() + b * plane, plane, out.data() + (2 * b + 1) * plane);
  }
  return out;
}

template <typename S>
Spectrogram<S> unpack_spectrogram(const Tensor<S>& packed) {
  if (packed.rank() != 4 || packed.dim(1) != 2) throw ShapeError("unpack_spectrogram expects (B,2,T,F), got " + to_string(packed.shape()));
  const std::size_t batch = packed.dim(0), plane = packed.dim(2) * packed.dim(3);
  Spectrogram<S> out{Tensor<S>({batch, packed.dim(2), packed.dim(3)}), Tensor<S>({batch, packed.dim(2), packed.dim(3)})};
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(packed.data() + (2 * b) * plane, plane, out.real.data() + b * plane);
    std::copy_n(packed.data() + (2 * b + 1) * plane, plane, out.imag.data() + b * plane);
  }
  return out;
}

template <typename S>
double si_sdr(std::span<const S> estimate, std::span<const S> reference) {
  if (estimate.size() != reference.size()) {
    throw ShapeError("si_sdr", Shape{estimate.size()}, Shape{reference.size()});
  }
  double dot = 0, ref_energy = 0, est_energy = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    dot += static_cast<double>(estimate[i]) * reference[i];
    ref_energy += static_cast<double>(reference[i]) * reference[i];
    est_energy += static_cast<double>(estimate[i]) * estimate[i];
  }
  if (ref_energy == 0.0) throw DegenerateInput("si_sdr: zero reference");
  if (est_energy == 0.0) return -kSiSdrCap;
  const double alpha = dot / ref_energy;
  double target = 0, noise = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double s = alpha * reference[i];
    const double e = s - estimate[i];
    target += s * s;
    noise += e * e;
  }
  if (noise == 0.0) return kSiSdrCap;
  if (target == 0.0) return -kSiSdrCap;
  return std::clamp(10.0 * std::log10(target / noise), -kSiSdrCap, kSiSdrCap);
}

template <typename S>
Var<S> si_sdr_loss(const Var<S>& estimate, const Var<S>& reference) {
  if (estimate.rank() != 2 || estimate.shape() != reference.shape()) {
    throw ShapeError("si_sdr_loss", estimate.shape(), reference.shape());
  }
  auto ref_energy = sum(square(reference), 1);
  for (S e : ref_energy.value().values()) {
    if (e == S(0)) throw DegenerateInput("si_sdr_loss: zero reference");
  }
  auto alpha = div(sum(mul(estimate, reference), 1), ref_energy);
  auto target = mul_leading(reference, alpha);
  auto noise = sub(target, estimate);
  auto ratio = div(sum(square(target), 1), sum(square(noise), 1));
  auto db = scale(log(ratio), static_cast<S>(10.0 / std::numbers::ln10));
  return neg(mean(db, 0));
}

#define MVTF_INSTANTIATE_SIGNAL(S)                                                                   \
  template AudioBatch<S> normalize_mixture(const Tensor<S>&);                                        \
  template std::pair<Var<S>, Var<S>> stft(const Var<S>&, const StftConfig&);                         \
  template Var<S> istft(const Var<S>&, const Var<S>&, const StftConfig&, std::size_t);               \
  template Spectrogram<S> stft(const AudioBatch<S>&, const StftConfig&);                             \
  template Tensor<S> istft(const Spectrogram<S>&, const StftConfig&, std::size_t);                   \
  template Tensor<S> pack_spectrogram(const Spectrogram<S>&);                                        \
  template Spectrogram<S> unpack_spectrogram(const Tensor<S>&);                                      \
  template double si_sdr(std::span<const S>, std::span<const S>);                                    \
  template Var<S> si_sdr_loss(const Var<S>&, const Var<S>&);

MVTF_INSTANTIATE_SIGNAL(float)
MVTF_INSTANTIATE_SIGNAL(double)

}  // namespace mvtf
