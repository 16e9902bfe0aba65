// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mvtf/training.hpp"
#include "test_util.hpp"

using namespace mvtf;
namespace fs = std::filesystem;
using mvtf::testing::random_tensor;

namespace {

double norm_of(const std::vector<TensorXd>& ts) {
  double s = 0;
  for (const auto& t : ts) s += t.array().square().sum();
  return std::sqrt(s);
}

std::vector<TensorXd*> ptrs(std::vector<TensorXd>& ts) {
  std::vector<TensorXd*> out;
  for (auto& t : ts) out.push_back(&t);
  return out;
}

// Small but complete pipeline: short clips, narrow model.
ModelConfig tiny_model(FusionStrategy fusion = FusionStrategy::kMvtf) {
  ModelConfig m;
  m.n_fft = 64;
  m.hop = 32;
  m.F = 33;
  m.H = 4;
  m.blocks = 1;
  m.D = 8;
  m.rnn_hidden = 3;
  m.fusion = fusion;
  return m;
}

struct TinyCorpus {
  fs::path dir;
  std::vector<MixtureRecord> records;
};

const TinyCorpus& tiny_corpus() {
  static const TinyCorpus corpus = [] {
    TinyCorpus c;
    c.dir = fs::temp_directory_path() / "mvtf_training_test" / "corpus";
    fs::remove_all(c.dir);
    DatasetConfig dc;
    dc.train = 6;
    dc.val = 3;
    dc.test = 4;
    dc.speakers = 10;
    dc.samples = 2000;
    dc.synth.dim = 8;
    c.records = build_dataset(dc, 77, c.dir);
    return c;
  }();
  return corpus;
}

template <typename S>
std::vector<PreparedRecord<S>> tiny_split(Split split, const ModelConfig& m = tiny_model()) {
  return prepare_records<S>(tiny_corpus().dir, tiny_corpus().records, split, m);
}

}  // namespace

TEST(ClipGradients, BelowThresholdUnchanged) {
  std::vector<TensorXd> g{TensorXd({2}, {0.3, 0.4})};
  EXPECT_DOUBLE_EQ(clip_gradients(ptrs(g), 1.0), 0.5);
  EXPECT_EQ(g[0], TensorXd({2}, {0.3, 0.4}));
}

TEST(ClipGradients, ScalesToUnitNorm) {
  std::vector<TensorXd> g{TensorXd({2}, {3.0, 4.0})};
  EXPECT_DOUBLE_EQ(clip_gradients(ptrs(g), 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[0][1], 0.8, 1e-15);

  Rng rng(1);
  std::vector<TensorXd> many{random_tensor({3, 4}, rng), random_tensor({5}, rng), random_tensor({2, 2, 2}, rng)};
  const double before = norm_of(many);
  for (auto& t : many) t.array() *= 4.0 / before;
  EXPECT_NEAR(clip_gradients(ptrs(many), 1.0), 4.0, 1e-12);
  EXPECT_NEAR(norm_of(many), 1.0, 1e-10);
}

TEST(ClipGradients, NeverIncreasesNormAndRejectsNonFinite) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    std::vector<TensorXd> g{random_tensor({7}, rng, -2, 2)};
    const double before = norm_of(g);
    clip_gradients(ptrs(g), 0.5 + i * 0.1);
    EXPECT_LE(norm_of(g), before + 1e-15);
  }
  std::vector<TensorXd> bad{TensorXd({2}, {1.0, std::nan("")})};
  EXPECT_THROW(clip_gradients(ptrs(bad), 1.0), NumericalError);
  std::vector<TensorXd> inf{TensorXd({1}, {INFINITY})};
  EXPECT_THROW(clip_gradients(ptrs(inf), 1.0), NumericalError);
}

TEST(Schedule, ImprovingKeepsRate) {
  TrainState st = TrainState::initial(1e-3);
  for (int e = 0; e < 20; ++e) st = lr_schedule_step(st, e * 0.1);
  EXPECT_EQ(st.lr, 1e-3);
  EXPECT_FALSE(st.stop);
  EXPECT_EQ(st.best_val, 1.9000000000000001);
}

TEST(Schedule, HalvesAfterThreeFlatEpochsAndStopsAfterTen) {
  TrainState st = TrainState::initial(1e-3);
  st = lr_schedule_step(st, 5.0);
  ASSERT_TRUE(st.improved);
  const std::vector<double> expected_lr{1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 2.5e-4, 2.5e-4, 2.5e-4, 1.25e-4, 1.25e-4};
  for (std::size_t k = 0; k < 10; ++k) {
    EXPECT_FALSE(st.stop) << k;
    st = lr_schedule_step(st, 5.0);  // equal is not an improvement
    EXPECT_FALSE(st.improved);
    EXPECT_EQ(st.lr, expected_lr[k]) << "flat epoch " << k + 1;
  }
  EXPECT_TRUE(st.stop);
  EXPECT_EQ(st.epochs_since_improve, 10u);
  EXPECT_EQ(st.lr, 1e-3 * std::pow(2.0, -3));
}

TEST(Schedule, ImprovementResetsBothCounters) {
  TrainState st = TrainState::initial(1e-3);
  st = lr_schedule_step(st, 1.0);
  st = lr_schedule_step(st, 0.5);
  st = lr_schedule_step(st, 0.5);
  st = lr_schedule_step(st, 2.0);
  EXPECT_EQ(st.epochs_since_improve, 0u);
  EXPECT_EQ(st.plateau, 0u);
  for (int i = 0; i < 2; ++i) st = lr_schedule_step(st, 0.0);
  EXPECT_EQ(st.lr, 1e-3);
  st = lr_schedule_step(st, 0.0);
  EXPECT_EQ(st.lr, 5e-4);
}

TEST(Schedule, DeltaAndEpochCeiling) {
  TrainOptions opt;
  opt.improve_delta = 0.5;
  TrainState st = TrainState::initial(1e-3);
  st = lr_schedule_step(st, 1.0, opt);
  st = lr_schedule_step(st, 1.4, opt);
  EXPECT_FALSE(st.improved);
  TrainOptions cap;
  TrainState run = TrainState::initial(1e-3);
  std::size_t epochs = 0;
  while (!run.stop) {
    run = lr_schedule_step(run, static_cast<double>(epochs), cap);
    ++epochs;
  }
  EXPECT_EQ(epochs, 100u);
  cap.max_epochs = 101;
  EXPECT_THROW(cap.validate(), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = VarXd::parameter(TensorXd({2}, {1.0, -2.0}));
  ParamList<double> params{{"w", w}};
  Adam<double> adam(params);
  sum_all(mul(w, VarXd::constant(TensorXd({2}, {3.0, -0.5})))).backward();
  adam.step(params, 0.1);
  // m_hat / sqrt(v_hat) = g / |g| on the first step.
  EXPECT_NEAR(w.value()[0], 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
  EXPECT_NEAR(w.value()[1], -2.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Config, DefaultsOverridesAndErrors) {
  const Config def = config_from_json(nlohmann::json::object());
  EXPECT_EQ(def.model.F, 129u);
  EXPECT_EQ(def.train.batch, 8u);
  EXPECT_EQ(def.train.view_strategy, ViewStrategy::kRandom3);
  EXPECT_EQ(def.data.train, 200u);
  auto j = nlohmann::json::parse(R"({"data": {"manifest": "m.jsonl"}, "model": {"H": 16, "D": 32},
      "fusion": {"strategy": "attention"}, "train": {"lr": 0.002, "view_strategy": "front3", "max_epochs": 30}})");
  const Config c = config_from_json(j);
  EXPECT_EQ(c.manifest, "m.jsonl");
  EXPECT_EQ(c.model.H, 16u);
  EXPECT_EQ(c.data.synth.dim, 32u);
  EXPECT_EQ(c.model.fusion, FusionStrategy::kAttention);
  EXPECT_EQ(c.train.lr, 0.002);
  EXPECT_EQ(config_from_json(to_json(c)).model.fusion, FusionStrategy::kAttention);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"train": {"learning_rate": 1}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"model": {"F": 100}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"model": {"D": 16}, "synth": {"dim": 8}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"fusion": {"strategy": "sum"}})")), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), InputError);
}

TEST(ViewConfigs, ParseAndDescribe) {
  EXPECT_EQ(ViewConfig::parse("front").describe(), "front,front,front");
  EXPECT_EQ(ViewConfig::parse("front,left30").describe(), "front,left30,front");
  EXPECT_EQ(ViewConfig::parse("injected").describe(), "injected");
  EXPECT_EQ(ViewConfig::parse("top,down,right60").kind, ViewConfig::Kind::kCombo);
  EXPECT_THROW(ViewConfig::parse("side"), InputError);
  EXPECT_THROW(ViewConfig::parse("front,front,front,front"), InputError);
}

TEST(Checkpoint, RoundTripAcrossPrecisions) {
  const auto dir = fs::temp_directory_path() / "mvtf_training_test";
  fs::create_directories(dir);
  const auto model = Model<double>::init(tiny_model(FusionStrategy::kAttention), 5);
  save_checkpoint(dir / "a.ckpt", model, {{"note", "x"}});
  const auto back = load_checkpoint<double>(dir / "a.ckpt");
  EXPECT_EQ(back.config.fusion, FusionStrategy::kAttention);
  const auto a = model.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].var.value(), b[i].var.value());
  }
  const auto f = load_checkpoint<float>(dir / "a.ckpt");
  EXPECT_EQ(f.parameters()[0].var.value(), a[0].var.value().cast<float>());
  EXPECT_EQ(checkpoint_metadata(dir / "a.ckpt").at("note"), "x");

  std::ofstream(dir / "bad.ckpt") << "MVTFCKPT 2\nend\n";
  EXPECT_THROW(load_checkpoint<double>(dir / "bad.ckpt"), FormatError);
  std::ofstream(dir / "trunc.ckpt") << "MVTFCKPT 1\n__config__ 0 500\nend\n{}";
  EXPECT_THROW(load_checkpoint<double>(dir / "trunc.ckpt"), FormatError);
  EXPECT_THROW(load_checkpoint<double>(dir / "missing.ckpt"), InputError);
}

TEST(Evaluate, MixtureBaselineAndViewEquivalences) {
  const auto test = tiny_split<double>(Split::kTest);
  ASSERT_EQ(test.size(), 4u);
  const auto model = Model<double>::init(tiny_model(), 3);
  const auto base = evaluate_mixture(test);
  const auto single = evaluate(model, test, ViewConfig::parse("front"), 1, 3);
  const auto triple = evaluate(model, test, ViewConfig::parse("front,front,front"), 1, 3);
  EXPECT_EQ(single.per_item, triple.per_item);
  EXPECT_EQ(single.views, triple.views);
  EXPECT_EQ(single.mixture_mean, base.mean);
  const auto p1 = evaluate(model, test, ViewConfig::parse("front,left30,right30"), 1, 3);
  const auto p2 = evaluate(model, test, ViewConfig::parse("right30,front,left30"), 1, 3);
  EXPECT_EQ(p1.per_item, p2.per_item);
  const auto inj = evaluate(model, test, ViewConfig::parse("injected"), 1, 3);
  EXPECT_EQ(inj.per_item, evaluate(model, test, ViewConfig::parse("injected"), 1, 3).per_item);
  EXPECT_NE(inj.per_item, single.per_item);
}

TEST(Evaluate, CheckpointReproducesMetricsBitIdentically) {
  const auto test = tiny_split<double>(Split::kTest);
  const auto dir = fs::temp_directory_path() / "mvtf_training_test";
  const auto model = Model<double>::init(tiny_model(), 4);
  save_checkpoint(dir / "eval.ckpt", model);
  const auto back = load_checkpoint<double>(dir / "eval.ckpt");
  for (const char* v : {"front", "top,left60,down", "injected"}) {
    EXPECT_EQ(evaluate(model, test, ViewConfig::parse(v), 2).per_item,
              evaluate(back, test, ViewConfig::parse(v), 2).per_item) << v;
  }
}

TEST(Train, DeterministicInDoublePrecision) {
  const auto tr = tiny_split<double>(Split::kTrain), va = tiny_split<double>(Split::kVal);
  TrainOptions opt;
  opt.max_epochs = 2;
  opt.batch = 4;
  opt.seed = 11;
  auto run = [&] {
    auto model = Model<double>::init(tiny_model(), 9);
    return train(model, opt, tr, va);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.history.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_si_sdr, b.history[i].val_si_sdr);
  }
}

TEST(Train, BestValidationIsMonotoneAndCheckpointed) {
  const auto tr = tiny_split<double>(Split::kTrain), va = tiny_split<double>(Split::kVal);
  const auto ckpt = fs::temp_directory_path() / "mvtf_training_test" / "best.ckpt";
  for (auto strategy : {ViewStrategy::kFront3, ViewStrategy::kRandom3}) {
    TrainOptions opt;
    opt.max_epochs = 3;
    opt.batch = 3;
    opt.view_strategy = strategy;
    auto model = Model<double>::init(tiny_model(), 1);
    const auto st = train(model, opt, tr, va, ckpt);
    double best = -INFINITY;
    for (const auto& r : st.history) {
      const double next = std::max(best, r.val_si_sdr);
      EXPECT_GE(next, best);
      best = next;
    }
    EXPECT_EQ(best, st.best_val);
    // The saved (best) parameters reproduce the best validation score.
    const auto back = load_checkpoint<double>(ckpt);
    EXPECT_EQ(evaluate(back, va, ViewConfig::parse("front"), opt.seed, opt.batch).mean, st.best_val);
  }
}

TEST(Train, OverfitsOneBatch) {
  // 1984 samples are covered exactly by 64/32 frames, so every sample is reachable.
  ModelConfig m = tiny_model();
  m.H = 16;
  m.rnn_hidden = 8;
  const auto dir = fs::temp_directory_path() / "mvtf_training_test" / "overfit";
  fs::remove_all(dir);
  DatasetConfig dc;
  dc.train = 2;
  dc.val = 1;
  dc.test = 1;
  dc.speakers = 10;
  dc.samples = 1984;
  dc.synth.dim = 8;
  const auto records = build_dataset(dc, 77, dir);
  const auto tr = prepare_records<double>(dir, records, Split::kTrain, m);
  auto model = Model<double>::init(m, 2);
  Trainer<double> trainer(model, TrainOptions{});
  trainer.set_lr(3e-3);
  const std::vector<std::size_t> idx{0};
  const auto batch = make_batch(tr, idx);
  const auto views = batch_views(tr, idx, {"front"});
  for (int step = 0; step < 200; ++step) trainer.step(batch, views, 0);
  NoGradGuard guard;
  const auto out = model.forward(batch.spec, batch.sigma, batch.length, views).value();
  const std::span<const double> est(out.data(), batch.length);
  EXPECT_GT(si_sdr<double>(est, tr[0].target_d), 20.0);
}
