// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "mvtf/grad_check.hpp"
#include "mvtf/ops.hpp"
#include "mvtf/signal.hpp"
#include "mvtf/wav.hpp"
#include "test_util.hpp"

using namespace mvtf;
using mvtf::testing::random_tensor;

namespace {

AudioBatch<double> as_batch(TensorXd x) {
  AudioBatch<double> a;
  a.original_length = x.dim(1);
  a.sigma = TensorXd::ones({x.dim(0)});
  a.waveform = std::move(x);
  return a;
}

// Direct evaluation of the windowed DFT, independent of the matmul path.
std::complex<double> naive_bin(const TensorXd& x, std::size_t item, std::size_t frame, std::size_t bin,
                               const StftConfig& cfg) {
  std::complex<double> acc = 0;
  for (std::size_t n = 0; n < cfg.n_fft; ++n) {
    const double v = x.at({item, frame * cfg.hop + n}) * cfg.window[n];
    acc += v * std::polar(1.0, -2.0 * std::numbers::pi * double(bin) * double(n) / double(cfg.n_fft));
  }
  return acc;
}

}  // namespace

TEST(NormalizeMixture, Examples) {
  auto a = normalize_mixture(TensorXd({1, 4}, {1, -1, 1, -1}));
  EXPECT_EQ(a.waveform, TensorXd({1, 4}, {1, -1, 1, -1}));
  EXPECT_DOUBLE_EQ(a.sigma[0], 1.0);
  auto b = normalize_mixture(TensorXd({1, 4}, {2, -2, 2, -2}));
  EXPECT_EQ(b.waveform, TensorXd({1, 4}, {1, -1, 1, -1}));
  EXPECT_DOUBLE_EQ(b.sigma[0], 2.0);
  EXPECT_EQ(b.original_length, 4u);
}

TEST(NormalizeMixture, ZeroVarianceNamesTheItem) {
  TensorXd x({2, 4}, {1, 2, 3, 4, 0, 0, 0, 0});
  try {
    normalize_mixture(x);
    FAIL();
  } catch (const DegenerateInput& e) {
    EXPECT_NE(std::string(e.what()).find("item 1"), std::string::npos);
  }
}

TEST(NormalizeMixture, UnitStdProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    TensorXd x = random_tensor({3, 1000}, rng, -5.0 * (trial + 1), 3.0 * (trial + 1));
    auto a = normalize_mixture(x);
    for (std::size_t b = 0; b < 3; ++b) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 1000; ++i) m += a.waveform.at({b, i});
      m /= 1000;
      for (std::size_t i = 0; i < 1000; ++i) v += std::pow(a.waveform.at({b, i}) - m, 2);
      EXPECT_NEAR(std::sqrt(v / 1000), 1.0, 1e-6);
      EXPECT_GT(a.sigma[b], 0.0);
      // Division only: the ratio is constant.
      EXPECT_NEAR(a.waveform.at({b, 7}) * a.sigma[b], x.at({b, 7}), 1e-12);
    }
  }
}

TEST(Stft, ConfigDefaults) {
  auto cfg = StftConfig::sqrt_hann();
  EXPECT_EQ(cfg.bins(), 129u);
  EXPECT_EQ(cfg.frames(16000), 124u);
  EXPECT_EQ(cfg.frames(256), 1u);
  EXPECT_THROW(cfg.frames(255), ShapeError);
  EXPECT_THROW(StftConfig::sqrt_hann(256, 100), ConfigError);
}

TEST(Stft, ZeroWaveformGivesZeroSpectrogram) {
  auto cfg = StftConfig::sqrt_hann();
  auto s = stft(as_batch(TensorXd({2, 1024})), cfg);
  EXPECT_EQ(s.real.shape(), (Shape{2, 7, 129}));
  EXPECT_EQ(s.real.array().abs().maxCoeff(), 0.0);
  EXPECT_EQ(s.imag.array().abs().maxCoeff(), 0.0);
}

TEST(Stft, TooShortSignalIsShapeError) {
  EXPECT_THROW(stft(as_batch(TensorXd({1, 100})), StftConfig::sqrt_hann()), ShapeError);
}

TEST(Stft, MatchesDirectDft) {
  auto cfg = StftConfig::sqrt_hann(64, 16);
  std::mt19937_64 rng(12);
  TensorXd x = random_tensor({2, 200}, rng);
  auto s = stft(as_batch(x), cfg);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < s.real.dim(1); t += 3) {
      for (std::size_t k = 0; k < cfg.bins(); ++k) {
        const auto ref = naive_bin(x, b, t, k, cfg);
        EXPECT_NEAR(s.real.at({b, t, k}), ref.real(), 1e-10);
        EXPECT_NEAR(s.imag.at({b, t, k}), ref.imag(), 1e-10);
      }
    }
  }
}

TEST(Stft, CosineAtBinFrequencyPeaksAtThatBin) {
  auto cfg = StftConfig::sqrt_hann();
  for (std::size_t k : {3u, 17u, 64u, 100u}) {
    TensorXd x({1, 4096});
    for (std::size_t n = 0; n < 4096; ++n) {
      x[n] = std::cos(2.0 * std::numbers::pi * double(k) * double(n) / double(cfg.n_fft));
    }
    auto s = stft(as_batch(x), cfg);
    for (std::size_t t = 0; t < s.real.dim(1); ++t) {
      std::size_t best = 0;
      double best_mag = -1;
      for (std::size_t f = 0; f < cfg.bins(); ++f) {
        const double mag = std::hypot(s.real.at({0, t, f}), s.imag.at({0, t, f}));
        if (mag > best_mag) best_mag = mag, best = f;
      }
      EXPECT_EQ(best, k);
    }
  }
}

TEST(Istft, RoundTripOnNoise) {
  auto cfg = StftConfig::sqrt_hann();
  std::mt19937_64 rng(13);
  TensorXd x = random_tensor({2, 16000}, rng);
  auto y = istft(stft(as_batch(x), cfg), cfg, 16000);
  auto [lo, hi] = cfg.valid_range(16000);
  const double peak = x.array().abs().maxCoeff();
  double worst = 0;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = lo; i < hi; ++i) worst = std::max(worst, std::abs(y.at({b, i}) - x.at({b, i})));
  }
  EXPECT_LT(worst, 1e-6 * peak);
}

TEST(Istft, RoundTripOnSinusoidAndOtherGeometries) {
  for (auto [n_fft, hop] : {std::pair<std::size_t, std::size_t>{256, 128}, {128, 32}, {64, 16}}) {
    auto cfg = StftConfig::sqrt_hann(n_fft, hop);
    const std::size_t len = 4 * n_fft + 37;
    TensorXd x({1, len});
    for (std::size_t n = 0; n < len; ++n) x[n] = std::sin(2.0 * std::numbers::pi * 441.0 * double(n) / 16000.0);
    auto y = istft(stft(as_batch(x), cfg), cfg, len);
    auto [lo, hi] = cfg.valid_range(len);
    double err = 0, ref = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      err += std::pow(y[i] - x[i], 2);
      ref += x[i] * x[i];
    }
    EXPECT_LT(std::sqrt(err / ref), 1e-6) << n_fft << "/" << hop;
  }
}

TEST(Istft, ZeroSpectrogramGivesZeroWaveform) {
  auto cfg = StftConfig::sqrt_hann();
  Spectrogram<double> s{TensorXd({1, 5, 129}), TensorXd({1, 5, 129})};
  auto y = istft(s, cfg, 900);
  EXPECT_EQ(y.shape(), (Shape{1, 900}));
  EXPECT_EQ(y.array().abs().maxCoeff(), 0.0);
  Spectrogram<double> bad{TensorXd({1, 5, 100}), TensorXd({1, 5, 100})};
  EXPECT_THROW(istft(bad, cfg, 900), ShapeError);
}

TEST(PackSpectrogram, ChannelOrderAndInverse) {
  std::mt19937_64 rng(14);
  Spectrogram<double> real_only{random_tensor({2, 3, 5}, rng), TensorXd({2, 3, 5})};
  auto packed = pack_spectrogram(real_only);
  EXPECT_EQ(packed.shape(), (Shape{2, 2, 3, 5}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t f = 0; f < 5; ++f) {
        EXPECT_EQ(packed.at({b, 1, t, f}), 0.0);
        EXPECT_EQ(packed.at({b, 0, t, f}), real_only.real.at({b, t, f}));
      }
    }
  }
  Spectrogram<double> s{random_tensor({2, 3, 5}, rng), random_tensor({2, 3, 5}, rng)};
  auto back = unpack_spectrogram(pack_spectrogram(s));
  EXPECT_EQ(back.real, s.real);
  EXPECT_EQ(back.imag, s.imag);
}

TEST(SiSdr, Examples) {
  std::vector<double> ref{0.3, -1.2, 0.8, 2.0};
  std::vector<double> twice{0.6, -2.4, 1.6, 4.0};
  EXPECT_EQ(si_sdr<double>(ref, ref), 60.0);
  EXPECT_EQ(si_sdr<double>(twice, ref), 60.0);
  std::vector<double> r{1, 0}, e{1, 1};
  EXPECT_NEAR(si_sdr<double>(e, r), 0.0, 1e-12);
  std::vector<double> zero(4, 0.0);
  EXPECT_EQ(si_sdr<double>(zero, ref), -60.0);
  EXPECT_THROW(si_sdr<double>(ref, zero), DegenerateInput);
}

TEST(SiSdr, ScaleInvariance) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    TensorXd est = random_tensor({300}, rng), ref = random_tensor({300}, rng);
    const double base = si_sdr<double>(est.values(), ref.values());
    for (double c : {0.5, 3.0, 100.0}) {
      TensorXd scaled = est;
      scaled.array() *= c;
      EXPECT_NEAR(si_sdr<double>(scaled.values(), ref.values()), base, 1e-10);
    }
  }
}

TEST(SiSdr, OrthogonalNoiseGivesAnalyticSnr) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    TensorXd ref = random_tensor({512}, rng), n = random_tensor({512}, rng);
    // Gram-Schmidt: remove the reference component from the noise.
    const double proj = (n.array() * ref.array()).sum() / ref.array().square().sum();
    n.array() -= proj * ref.array();
    n.array() *= std::pow(10.0, (trial % 7 - 3) / 2.0);
    TensorXd est = ref;
    est.array() += n.array();
    const double analytic = 10.0 * std::log10(ref.array().square().sum() / n.array().square().sum());
    EXPECT_NEAR(si_sdr<double>(est.values(), ref.values()), analytic, 1e-6);
  }
}

TEST(SiSdrLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    auto rep = grad_check("si_sdr_loss", [](const auto& v) { return si_sdr_loss(v[0], v[1]); },
                          {random_tensor({2, 64}, rng), random_tensor({2, 64}, rng)});
    EXPECT_LT(rep.max_rel_error, 1e-4);
  }
}

TEST(SiSdrLoss, MatchesMetricAndIsScaleInvariantPerItem) {
  std::mt19937_64 rng(18);
  TensorXd est = random_tensor({3, 100}, rng), ref = random_tensor({3, 100}, rng);
  const double loss = si_sdr_loss(VarXd::constant(est), VarXd::constant(ref)).value()[0];
  double mean_metric = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    mean_metric += si_sdr<double>(std::span(est.data() + b * 100, 100), std::span(ref.data() + b * 100, 100));
  }
  EXPECT_NEAR(loss, -mean_metric / 3, 1e-10);
  TensorXd scaled = est;
  for (std::size_t i = 0; i < 100; ++i) scaled.at({0, i}) *= 7.0, scaled.at({2, i}) *= 0.01;
  EXPECT_NEAR(si_sdr_loss(VarXd::constant(scaled), VarXd::constant(ref)).value()[0], loss, 1e-10);
}

TEST(SiSdrLoss, IsUncappedAndRejectsZeroReference) {
  TensorXd ref({1, 4}, {1, 2, 3, 4}), est({1, 4}, {1, 2, 3, 4.0000001});
  EXPECT_LT(si_sdr_loss(VarXd::constant(est), VarXd::constant(ref)).value()[0], -60.0);
  EXPECT_THROW(si_sdr_loss(VarXd::constant(est), VarXd::constant(TensorXd({1, 4}))), DegenerateInput);
}

TEST(Wav, RoundTripBothEncodings) {
  const auto dir = std::filesystem::temp_directory_path() / "mvtf_wav_test";
  std::filesystem::create_directories(dir);
  std::vector<float> samples{0.0f, 0.5f, -0.25f, 0.999f, -1.0f};
  write_wav(dir / "f.wav", samples, WavEncoding::kFloat32);
  EXPECT_EQ(read_wav(dir / "f.wav"), samples);
  write_wav(dir / "p.wav", samples, WavEncoding::kPcm16);
  auto pcm = read_wav(dir / "p.wav");
  ASSERT_EQ(pcm.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_NEAR(pcm[i], samples[i], 1.0 / 16384);
}

TEST(Wav, RejectsOtherSampleRates) {
  const auto path = std::filesystem::temp_directory_path() / "mvtf_wav_44k.wav";
  write_wav(path, {0.1f, 0.2f});
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(24);
  const std::uint32_t rate = 44100;
  f.write(reinterpret_cast<const char*>(&rate), 4);
  f.close();
  EXPECT_THROW(read_wav(path), InputError);
  EXPECT_THROW(read_wav("/nonexistent/file.wav"), InputError);
}
