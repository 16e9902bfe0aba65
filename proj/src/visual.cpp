// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/visual.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <fstream>

#include "json.hpp"

#include "mvtf/seeding.hpp"
#include "mvtf/signal.hpp"

namespace mvtf {

bool is_known_view(std::string_view label) {
  return std::find(kViewLabels.begin(), kViewLabels.end(), label) != kViewLabels.end();
}

int view_difficulty(std::string_view label) {
  if (label == "front") return 0;
  if (label == "down" || label == "left30" || label == "right30") return 1;
  if (label == "left60" || label == "right60") return 2;
  if (label == "top") return 3;
  throw InputError("unknown view label '" + std::string(label) + "'");
}

void SynthConfig::validate() const {
  if (dim == 0) throw ConfigError("synth dim must be positive");
  if (!(fps > 0)) throw ConfigError("synth fps must be positive");
  if (noise < 0) throw ConfigError("synth noise must be non-negative");
  if (distortion < 0 || distortion >= 1) throw ConfigError("synth distortion must lie in [0, 1)");
}

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

constexpr std::array<double, 4> kBandCentersHz{300.0, 800.0, 1500.0, 2800.0};

// Per-frame RMS of the signal through constant-peak-gain band-pass biquads (Q = 1).
Eigen::MatrixXd band_envelopes(std::span<const float> x, std::size_t frame_len, std::size_t frames) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(Eigen::Index(frames), Eigen::Index(kBandCentersHz.size()));
  for (std::size_t b = 0; b < kBandCentersHz.size(); ++b) {
    const double w0 = 2.0 * std::numbers::pi * kBandCentersHz[b] / kSampleRate;
    const double alpha = std::sin(w0) / 2.0;
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0, a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (std::size_t t = 0; t < frames; ++t) {
      double e = 0;
      for (std::size_t i = 0; i < frame_len; ++i) {
        const double xn = x[t * frame_len + i];
        const double yn = b0 * xn + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = xn;
        y2 = y1;
        y1 = yn;
        e += yn * yn;
      }
      out(Eigen::Index(t), Eigen::Index(b)) = std::sqrt(e / double(frame_len));
    }
  }
  return out;
}

}  // namespace

ViewEmbeddingSeq synth_view_embeddings(std::span<const float> target, std::string_view view_label,
                                       const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int difficulty = view_difficulty(view_label);
  const auto frame_len = static_cast<std::size_t>(std::lround(kSampleRate / cfg.fps));
  const std::size_t frames = target.size() / frame_len;
  if (frames < 2) throw DegenerateInput("synth_view_embeddings: fewer than 2 video frames");
  const auto dim = static_cast<Eigen::Index>(cfg.dim);

  // (1) Frame-rate content relative to the utterance RMS: broadband envelope,
  // its first difference, and coarse band envelopes standing in for mouth shape.
  double total = 0;
  for (float s : target) total += double(s) * s;
  const double rms = std::sqrt(total / static_cast<double>(target.size()));
  const auto bands = band_envelopes(target, frame_len, frames);
  Eigen::MatrixXd content(static_cast<Eigen::Index>(frames), 2 + static_cast<Eigen::Index>(kBandCentersHz.size()));
  for (std::size_t t = 0; t < frames; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    double e = 0;
    for (std::size_t i = 0; i < frame_len; ++i) e += double(target[t * frame_len + i]) * target[t * frame_len + i];
    const double env = rms > 0 ? std::sqrt(e / double(frame_len)) / rms : 0.0;
    content(row, 0) = env;
    content(row, 1) = t == 0 ? 0.0 : env - content(row - 1, 0);
    for (std::size_t b = 0; b < kBandCentersHz.size(); ++b) {
      content(row, 2 + Eigen::Index(b)) = rms > 0 ? bands(row, Eigen::Index(b)) / rms : 0.0;
    }
  }

  // (2) Shared lift to D dimensions.
  Rng lift_rng(derive_seed(cfg.content_seed, "content-lift"));
  const Eigen::MatrixXd lift = gaussian(content.cols(), dim, lift_rng);
  Eigen::MatrixXd emb = content * lift;

  // (3) View-specific distortion (I + eps R, |R|_F = 1 keeps it invertible), bias, noise.
  const double strength = cfg.distortion * difficulty / 3.0;
  Rng view_rng(derive_seed(cfg.content_seed, view_label));
  Eigen::MatrixXd r = gaussian(dim, dim, view_rng);
  r /= r.norm();
  const Eigen::MatrixXd mix = Eigen::MatrixXd::Identity(dim, dim) + strength * r;
  const Eigen::RowVectorXd bias = strength * gaussian(1, dim, view_rng);
  emb = emb * mix;
  emb.rowwise() += bias;

  const double sigma = cfg.noise * (1.0 + difficulty);
  if (sigma > 0) {
    Rng noise_rng(derive_seed(seed, view_label));
    emb += sigma * gaussian(emb.rows(), dim, noise_rng);
  }

  ViewEmbeddingSeq out;
  out.view_label = std::string(view_label);
  out.fps = cfg.fps;
  out.embeddings = TensorXd({frames, cfg.dim});
  out.embeddings.matrix() = emb;
  return out;
}

ViewEmbeddingSeq load_embeddings(const std::filesystem::path& path) {
  ViewEmbeddingSeq seq;
  seq.embeddings = load_tensor<double>(path);
  if (seq.embeddings.rank() != 2) {
    throw FormatError(path.string() + ": embedding file must be rank 2, got rank " +
                      std::to_string(seq.embeddings.rank()));
  }
  seq.view_label = path.stem().string();
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream is(sidecar);
    const auto meta = nlohmann::json::parse(is, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) throw FormatError(sidecar.string() + ": invalid JSON");
    seq.fps = meta.value("fps", kVideoFps);
    seq.view_label = meta.value("view_label", seq.view_label);
  }
  return seq;
}

void save_embeddings(const std::filesystem::path& path, const ViewEmbeddingSeq& seq, Dtype dtype) {
  if (dtype == Dtype::kFloat32) {
    save_tensor(path, seq.embeddings.cast<float>());
  } else {
    save_tensor(path, seq.embeddings);
  }
  if (seq.fps != kVideoFps) {
    std::filesystem::path sidecar = path;
    sidecar += ".json";
    std::ofstream(sidecar) << nlohmann::json{{"fps", seq.fps}, {"view_label", seq.view_label}}.dump() << '\n';
  }
}

TensorXd upsample_time(const ViewEmbeddingSeq& seq, std::size_t frames) {
  if (frames == 0) throw InputError("upsample_time: target length must be >= 1");
  const std::size_t src = seq.frames(), dim = seq.dim();
  if (src == 0 || (src < 2 && frames > 1)) throw DegenerateInput("upsample_time: need at least 2 source frames");
  TensorXd out({frames, dim});
  for (std::size_t i = 0; i < frames; ++i) {
    const double pos = frames == 1 ? 0.0 : double(i) * double(src - 1) / double(frames - 1);
    const auto lo = std::min(static_cast<std::size_t>(pos), src - 1);
    const double frac = pos - double(lo);
    const double* a = seq.embeddings.data() + lo * dim;
    double* dst = out.data() + i * dim;
    if (frac == 0.0 || lo + 1 >= src) {
      std::copy(a, a + dim, dst);
      continue;
    }
    const double* b = a + dim;
    for (std::size_t d = 0; d < dim; ++d) dst[d] = (1.0 - frac) * a[d] + frac * b[d];
  }
  return out;
}

template <typename S>
ViewProjectionParams<S> ViewProjectionParams<S>::init(std::size_t k, std::size_t in, std::size_t out, Rng& rng) {
  if (k % 2 == 0) throw ConfigError("projection kernel width must be odd");
  const double limit = std::sqrt(6.0 / static_cast<double>(k * in + out));
  return {Var<S>::parameter(uniform_tensor<S>({k, in, out}, limit, rng)), Var<S>::parameter(Tensor<S>::zeros({out}))};
}

template <typename S>
void ViewProjectionParams<S>::collect(const std::string& prefix, ParamList<S>& out) const {
  out.push_back({prefix + ".kernel", kernel});
  out.push_back({prefix + ".bias", bias});
}

template <typename S>
Var<S> project_to_subspace(const Var<S>& embeddings, const ViewProjectionParams<S>& p) {
  const std::size_t k = p.kernel.dim(0), in = p.kernel.dim(1), out = p.kernel.dim(2);
  if (embeddings.rank() != 3 || embeddings.dim(2) != in) {
    throw ShapeError("project_to_subspace", embeddings.shape(), p.kernel.shape());
  }
  return linear(unfold_time(embeddings, k), reshape(p.kernel, {k * in, out}), p.bias);
}

template struct ViewProjectionParams<float>;
template struct ViewProjectionParams<double>;
template Var<float> project_to_subspace(const Var<float>&, const ViewProjectionParams<float>&);
template Var<double> project_to_subspace(const Var<double>&, const ViewProjectionParams<double>&);

}  // namespace mvtf
