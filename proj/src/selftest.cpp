// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/selftest.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

#include "mvtf/data.hpp"
#include "mvtf/fusion.hpp"
#include "mvtf/grad_check.hpp"
#include "mvtf/separator.hpp"
#include "mvtf/signal.hpp"
#include "mvtf/training.hpp"
#include "mvtf/visual.hpp"

namespace mvtf {
namespace {

namespace fs = std::filesystem;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

TensorXd rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  TensorXd t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

double max_abs_diff(const TensorXd& a, const TensorXd& b) {
  if (a.shape() != b.shape()) return INFINITY;
  return (a.array() - b.array()).abs().maxCoeff();
}

ViewSet<double> view_set(std::vector<VarXd> views) {
  ViewSet<double> vs;
  for (std::size_t i = 0; i < views.size(); ++i) vs.labels.push_back("v" + std::to_string(i));
  vs.views = std::move(views);
  return vs;
}

MvtfParams<double> random_mvtf(std::size_t f, Rng& rng) {
  auto p = MvtfParams<double>::init(f, rng);
  p.pair_norm.gamma = VarXd::parameter(rand_t(p.pair_norm.gamma.shape(), rng, 0.5, 1.5));
  p.pair_norm.beta = VarXd::parameter(rand_t(p.pair_norm.beta.shape(), rng, -0.2, 0.2));
  p.pair_proj.bias = VarXd::parameter(rand_t(p.pair_proj.bias.shape(), rng));
  return p;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Runs one check body; any exception is a failure carrying its message.
void run_check(SuiteResult& suite, const std::string& name, const std::function<CheckResult()>& body) {
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.name = name;
  suite.checks.push_back(std::move(r));
}

CheckResult below(double value, double tol, const char* f = "%.3g") {
  return {"", value < tol, fmt(f, value) + " < " + fmt("%g", tol)};
}

CheckResult exact(bool ok, const std::string& what) { return {"", ok, ok ? what + " identical" : what + " differ"}; }

}  // namespace

bool SuiteResult::pass() const {
  const bool all = std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
  return all && !checks.empty() && (budget_seconds <= 0 || seconds < budget_seconds);
}

SuiteResult fusion_suite(const SelftestOptions& opt) {
  Timer timer;
  SuiteResult s{"fusion", {}, 0.0, 60.0};
  run_check(s, "permutation invariance", [&] {
    Rng rng(9);
    const int draws = opt.fast ? 20 : 100;
    double worst = 0;
    for (int draw = 0; draw < draws; ++draw) {
      auto p = random_mvtf(5, rng);
      std::vector<VarXd> v;
      for (int i = 0; i < 3; ++i) v.push_back(VarXd::constant(rand_t({2, 4, 5}, rng)));
      const auto ref = mvtf_fuse(view_set(v), p).value();
      std::array<std::size_t, 3> order{0, 1, 2};
      while (std::next_permutation(order.begin(), order.end())) {
        worst = std::max(worst, max_abs_diff(ref, mvtf_fuse(view_set({v[order[0]], v[order[1]], v[order[2]]}), p).value()));
      }
    }
    auto r = below(worst, 1e-10);
    r.detail += " over " + std::to_string(draws) + " draws";
    return r;
  });
  run_check(s, "unimodal capture", [&] {
    Rng rng(5);
    const std::size_t f = 5, p = f + 1;
    auto oi = augment_bias(VarXd::constant(rand_t({3, f}, rng)));
    auto oj = augment_bias(VarXd::constant(rand_t({3, f}, rng)));
    const auto raw = outer(oi, oj, false).value();
    bool ok = true;
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t k = 0; k < f; ++k) {
        ok &= raw.at({t, f * p + k}) == oj.value().at({t, k});
        ok &= raw.at({t, k * p + f}) == oi.value().at({t, k});
      }
      ok &= raw.at({t, f * p + f}) == 1.0;
    }
    return exact(ok, "bias row/column and view entries");
  });
  run_check(s, "self-pair collapse", [&] {
    Rng rng(10);
    auto p = random_mvtf(5, rng);
    auto v = VarXd::constant(rand_t({2, 4, 5}, rng));
    const auto o = augment_bias(lstm_forward(v, p));
    return exact(mvtf_fuse(view_set({v, v, v}), p).value() == pair_fuse(o, o, p).value(), "fused and self-pair");
  });
  run_check(s, "replication equivalence", [&] {
    Rng rng(11);
    FusionParams<double> fp;
    fp.strategy = FusionStrategy::kMvtf;
    fp.mvtf = random_mvtf(5, rng);
    auto v = VarXd::constant(rand_t({2, 4, 5}, rng));
    return exact(fuse(view_set({v}), fp).value() == fuse(view_set({v, v, v}), fp).value(), "single and triple");
  });
  s.seconds = timer.seconds();
  return s;
}

SuiteResult gradient_suite(const SelftestOptions&) {
  Timer timer;
  SuiteResult s{"gradient", {}, 0.0, 300.0};
  constexpr double kTol = 1e-4;
  // Each op at three random small shapes; the worst error is reported.
  auto three = [&](const std::string& name, const std::function<GradCheckReport(std::size_t, Rng&)>& one) {
    run_check(s, name, [&] {
      Rng rng(std::hash<std::string>{}(name) & 0xffff);
      double worst = 0;
      for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, one(k, rng).max_rel_error);
      return below(worst, kTol);
    });
  };
  three("linear", [](std::size_t k, Rng& rng) {
    return grad_check("linear", [](const auto& v) { return linear(v[0], v[1], v[2]); },
                      {rand_t({2 + k, 3 + k}, rng), rand_t({3 + k, 1 + 2 * k}, rng), rand_t({1 + 2 * k}, rng)});
  });
  three("layer_norm", [](std::size_t k, Rng& rng) {
    return grad_check("layer_norm", [](const auto& v) { return layer_norm(v[0], v[1], v[2]); },
                      {rand_t({2 + k, 4 + 2 * k}, rng), rand_t({4 + 2 * k}, rng), rand_t({4 + 2 * k}, rng)});
  });
  three("conv projection", [](std::size_t k, Rng& rng) {
    const std::size_t t = 4 + k, d = 3 + 2 * k, f = 2 + k;
    return grad_check("conv_projection", [](const auto& v) {
      ViewProjectionParams<double> p{v[1], v[2]};
      return project_to_subspace(v[0], p);
    }, {rand_t({1, t, d}, rng), rand_t({3, d, f}, rng), rand_t({f}, rng)});
  });
  three("lstm", [](std::size_t k, Rng& rng) {
    const std::size_t in = 2 + k, h = 2 + k % 2;
    return grad_check("lstm", [](const auto& v) { return lstm(v[0], v[1], v[2], v[3]); },
                      {rand_t({2, 3 + k, in}, rng), rand_t({in, 4 * h}, rng), rand_t({h, 4 * h}, rng), rand_t({4 * h}, rng)});
  });
  three("pair_fuse", [](std::size_t k, Rng& rng) {
    const std::size_t f = 2 + k, t = 2 + k;
    const auto p0 = random_mvtf(f, rng);
    return grad_check("pair_fuse", [f](const std::vector<VarXd>& in) {
      MvtfParams<double> p;
      p.lstm.w_hh = VarXd::constant(TensorXd::zeros({f, 4 * f}));
      p.pair_norm = {in[2], in[3]};
      p.pair_proj = {in[4], in[5]};
      return pair_fuse(in[0], in[1], p);
    }, {rand_t({t, f + 1}, rng), rand_t({t, f + 1}, rng), p0.pair_norm.gamma.value(), p0.pair_norm.beta.value(),
        p0.pair_proj.weight.value(), p0.pair_proj.bias.value()});
  });
  three("mvtf_fuse", [](std::size_t k, Rng& rng) {
    const std::size_t f = 3, t = 2 + k;
    const auto p0 = random_mvtf(f, rng);
    return grad_check("mvtf_fuse", [](const std::vector<VarXd>& in) {
      MvtfParams<double> p;
      p.lstm = {in[3], in[4], in[5]};
      p.pair_norm = {in[6], in[7]};
      p.pair_proj = {in[8], in[9]};
      return mvtf_fuse(view_set({in[0], in[1], in[2]}), p);
    }, {rand_t({t, f}, rng), rand_t({t, f}, rng), rand_t({t, f}, rng), p0.lstm.w_ih.value(), p0.lstm.w_hh.value(),
        p0.lstm.bias.value(), p0.pair_norm.gamma.value(), p0.pair_norm.beta.value(), p0.pair_proj.weight.value(),
        p0.pair_proj.bias.value()});
  });
  three("grid_block", [](std::size_t k, Rng& rng) {
    const auto p0 = GridBlockParams<double>::init(3 + k % 2, 2 + k % 2, rng);
    ParamList<double> params;
    p0.collect("g", params);
    std::vector<TensorXd> inputs{rand_t({1, 3 + k % 2, 3 + k, 4 + k}, rng)};
    for (const auto& np : params) inputs.push_back(np.var.value());
    inputs[1] = rand_t(inputs[1].shape(), rng, 0.5, 1.5);
    inputs[2] = rand_t(inputs[2].shape(), rng);
    return grad_check("grid_block", [](const std::vector<VarXd>& in) {
      GridBlockParams<double> p;
      p.freq_norm = {in[1], in[2]};
      p.freq_fwd = {in[3], in[4], in[5]};
      p.freq_bwd = {in[6], in[7], in[8]};
      p.time_norm = {in[9], in[10]};
      p.time_rnn = {in[11], in[12], in[13]};
      p.merge = {in[14], in[15]};
      return grid_block(in[0], p);
    }, inputs);
  });
  three("si_sdr_loss", [](std::size_t k, Rng& rng) {
    return grad_check("si_sdr_loss", [](const auto& v) { return si_sdr_loss(v[0], v[1]); },
                      {rand_t({1 + k, 16 + 24 * k}, rng), rand_t({1 + k, 16 + 24 * k}, rng)});
  });
  s.seconds = timer.seconds();
  return s;
}

SuiteResult signal_suite(const SelftestOptions&) {
  Timer timer;
  SuiteResult s{"signal", {}, 0.0, 0.0};
  run_check(s, "istft(stft) roundtrip", [] {
    Rng rng(13);
    const auto cfg = StftConfig::sqrt_hann();
    const TensorXd x = rand_t({2, 16000}, rng);
    AudioBatch<double> audio{x, TensorXd::ones({2})};
    const auto y = istft(stft(audio, cfg), cfg, 16000);
    const auto [lo, hi] = cfg.valid_range(16000);
    double err = 0, ref = 0;
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t i = lo; i < hi; ++i) {
        err += std::pow(y.at({b, i}) - x.at({b, i}), 2);
        ref += std::pow(x.at({b, i}), 2);
      }
    }
    return below(std::sqrt(err / ref), 1e-6);
  });
  run_check(s, "si_sdr scale invariance", [] {
    // Equal up to floating-point reassociation; 1e-9 dB is far above rounding and far below any real effect.
    Rng rng(15);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const TensorXd est = rand_t({300}, rng), ref = rand_t({300}, rng);
      const double base = si_sdr<double>(est.values(), ref.values());
      for (double c : {0.5, 3.0, 100.0}) {
        TensorXd scaled = est;
        scaled.array() *= c;
        worst = std::max(worst, std::abs(si_sdr<double>(scaled.values(), ref.values()) - base));
      }
    }
    return below(worst, 1e-9, "%.3g dB");
  });
  run_check(s, "si_sdr analytic SNR", [] {
    Rng rng(16);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      TensorXd ref = rand_t({512}, rng), n = rand_t({512}, rng);
      n.array() -= (n.array() * ref.array()).sum() / ref.array().square().sum() * ref.array();
      n.array() *= std::pow(10.0, (trial % 7 - 3) / 2.0);
      TensorXd est = ref;
      est.array() += n.array();
      const double analytic = 10.0 * std::log10(ref.array().square().sum() / n.array().square().sum());
      worst = std::max(worst, std::abs(si_sdr<double>(est.values(), ref.values()) - analytic));
    }
    return below(worst, 1e-6, "%.3g dB");
  });
  run_check(s, "normalize_mixture unit std", [] {
    Rng rng(11);
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
      const auto a = normalize_mixture(rand_t({3, 1000}, rng, -5.0 * (trial + 1), 3.0 * (trial + 1)));
      for (std::size_t b = 0; b < 3; ++b) {
        Eigen::Map<const Eigen::ArrayXd> row(a.waveform.data() + b * 1000, 1000);
        const double sd = std::sqrt((row - row.mean()).square().mean());
        worst = std::max(worst, std::abs(sd - 1.0));
      }
    }
    return below(worst, 1e-6);
  });
  s.seconds = timer.seconds();
  return s;
}

SuiteResult data_suite(const SelftestOptions& opt) {
  Timer timer;
  SuiteResult s{"data", {}, 0.0, 0.0};
  const fs::path dir = fs::temp_directory_path() / ("mvtf_selftest_" + std::to_string(std::random_device{}()));
  DatasetConfig cfg;
  cfg.train = 6;
  cfg.val = 3;
  cfg.test = 3;
  cfg.speakers = 12;
  cfg.samples = 4000;
  cfg.synth.dim = 8;
  std::vector<MixtureRecord> records;
  run_check(s, "re-measured SNR", [&] {
    records = build_dataset(cfg, 42, dir);
    double worst = 0;
    for (const auto& r : records) {
      const auto loaded = load_record(dir, r);
      worst = std::max(worst, std::abs(measure_snr_db(loaded.target, loaded.scaled_interferer) - r.snr_db));
    }
    return below(worst, 1e-6, "%.3g dB");
  });
  run_check(s, "split disjointness", [&] {
    std::map<Split, std::set<std::string>> speakers, utterances;
    for (const auto& r : records) {
      speakers[r.split].insert(speaker_of(r.target_path));
      speakers[r.split].insert(speaker_of(r.interferer_path));
      utterances[r.split].insert(r.target_path);
      utterances[r.split].insert(r.interferer_path);
    }
    std::size_t shared = 0;
    for (Split a : {Split::kTrain, Split::kVal, Split::kTest}) {
      for (Split b : {Split::kTrain, Split::kVal, Split::kTest}) {
        if (a >= b) continue;
        for (const auto& x : speakers[a]) shared += speakers[b].count(x);
        for (const auto& x : utterances[a]) shared += utterances[b].count(x);
      }
    }
    return CheckResult{"", !records.empty() && shared == 0, std::to_string(shared) + " shared speakers/utterances"};
  });
  std::error_code ec;
  fs::remove_all(dir, ec);
  run_check(s, "injection window", [&] {
    std::size_t bad = 0, trials = 0;
    for (std::size_t t : {5, 10, 25, 50, 124}) {
      ViewEmbeddingSeq front, alt;
      front.embeddings = TensorXd({t, 2}, 0.0);
      alt.embeddings = TensorXd({t, 2}, 1.0);
      Rng rng(t);
      for (int k = 0; k < 200; ++k, ++trials) {
        const auto inj = inject_view_segments(front, alt, rng);
        // Integer form of 0.2T <= len <= 0.4T and [start, start+len) within [0.3T, 0.8T].
        bad += 10 * inj.length < 2 * t || 10 * inj.length > 4 * t;
        bad += 10 * inj.start < 3 * t || 10 * (inj.start + inj.length) > 8 * t;
        for (std::size_t i = 0; i < t; ++i) {
          const bool inside = i >= inj.start && i < inj.start + inj.length;
          bad += inj.sequence.embeddings.at({i, 0}) != (inside ? 1.0 : 0.0);
        }
      }
    }
    return CheckResult{"", bad == 0, std::to_string(bad) + " violations in " + std::to_string(trials) + " draws"};
  });
  run_check(s, "mixture baseline", [&] {
    DatasetConfig full;
    const auto pools = allocate_speakers(full, 7);
    const std::size_t n = opt.fast ? 100 : 500;
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto d = draw_record(7, record_id(Split::kTest, i), pools.test.size(), full.snr_min, full.snr_max);
      const auto t = synth_utterance(pools.test[d.target_index], d.target_seed, full.samples);
      const auto u = synth_utterance(pools.test[d.interferer_index], d.interferer_seed, full.samples);
      const std::vector<double> td(t.begin(), t.end()), ud(u.begin(), u.end());
      acc += si_sdr<double>(make_mixture(td, ud, d.snr_db), td);
    }
    const double mean = acc / double(n);
    return CheckResult{"", mean >= -1.5 && mean <= 1.5,
                       fmt("%.3f dB", mean) + " in [-1.5, 1.5] over " + std::to_string(n) + " items"};
  });
  s.seconds = timer.seconds();
  return s;
}

SuiteResult protocol_suite(const SelftestOptions&) {
  Timer timer;
  SuiteResult s{"protocol", {}, 0.0, 0.0};
  run_check(s, "lr halves after 3 flat epochs", [] {
    TrainState st = lr_schedule_step(TrainState::initial(1e-3), 1.0);
    std::vector<double> lrs;
    for (int k = 0; k < 9; ++k) {
      st = lr_schedule_step(st, 1.0);
      lrs.push_back(st.lr);
    }
    const bool ok = lrs[1] == 1e-3 && lrs[2] == 5e-4 && lrs[5] == 2.5e-4 && lrs[8] == 1.25e-4 && !st.stop;
    return CheckResult{"", ok, "lr after 3/6/9 flat epochs " + fmt("%g", lrs[2]) + "/" + fmt("%g", lrs[5]) + "/" +
                                   fmt("%g", lrs[8])};
  });
  run_check(s, "stop after 10 flat epochs", [] {
    TrainState st = lr_schedule_step(TrainState::initial(1e-3), 1.0);
    std::size_t flat = 0;
    while (!st.stop && flat < 50) {
      st = lr_schedule_step(st, 0.5);
      ++flat;
    }
    return CheckResult{"", flat == 10, "stopped after " + std::to_string(flat)};
  });
  run_check(s, "clipped norm <= 1", [] {
    Rng rng(3);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<TensorXd> g{rand_t({5, 3}, rng, -4, 4), rand_t({7}, rng, -4, 4)};
      std::vector<TensorXd*> ptr{&g[0], &g[1]};
      clip_gradients(ptr, 1.0);
      const double n = std::sqrt(g[0].array().square().sum() + g[1].array().square().sum());
      worst = std::max(worst, n - 1.0);
    }
    return below(worst, 1e-10);
  });
  run_check(s, "max 100 epochs", [] {
    TrainOptions opt;
    TrainState st = TrainState::initial(opt.lr);
    std::size_t epochs = 0;
    while (!st.stop && epochs < 1000) st = lr_schedule_step(st, double(++epochs), opt);
    bool rejected = false;
    try {
      opt.max_epochs = kMaxEpochs + 1;
      opt.validate();
    } catch (const ConfigError&) {
      rejected = true;
    }
    return CheckResult{"", epochs == kMaxEpochs && rejected,
                       "always-improving run stopped at " + std::to_string(epochs) + (rejected ? ", 101 rejected" : "")};
  });
  s.seconds = timer.seconds();
  return s;
}

std::vector<SuiteResult> run_selftest(const SelftestOptions& opt) {
  return {fusion_suite(opt), gradient_suite(opt), signal_suite(opt), data_suite(opt), protocol_suite(opt)};
}

std::string format_table(const std::vector<SuiteResult>& suites) {
  std::ostringstream os;
  char line[256];
  for (const auto& suite : suites) {
    for (const auto& c : suite.checks) {
      std::snprintf(line, sizeof line, "%-10s %-32s %-4s %s\n", suite.name.c_str(), c.name.c_str(),
                    c.pass ? "PASS" : "FAIL", c.detail.c_str());
      os << line;
    }
    std::snprintf(line, sizeof line, "%-10s %-32s %-4s %.2fs%s\n", suite.name.c_str(), "(suite)",
                  suite.pass() ? "PASS" : "FAIL", suite.seconds,
                  suite.budget_seconds > 0 ? fmt(" of %.0fs budget", suite.budget_seconds).c_str() : "");
    os << line;
  }
  return os.str();
}

}  // namespace mvtf
