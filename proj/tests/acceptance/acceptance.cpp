// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0
//
// Acceptance run: criteria 1-5 reuse the self-test suites; 6-8 train four
// models on the same synthetic corpus and budget and compare held-out scores.
// Prints one PASS/FAIL line per criterion and exits 3 if any gate fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "mvtf/selftest.hpp"
#include "mvtf/training.hpp"

using namespace mvtf;
namespace fs = std::filesystem;

namespace {

// Pinned gates.
constexpr double kMinImprovementDb = 1.0;
constexpr double kMaxTrainMinutes = 45.0;
constexpr std::size_t kMaxAcceptanceEpochs = 30;
constexpr std::uint64_t kCorpusSeed = 1234;
constexpr std::uint64_t kModelSeed = 1;
constexpr std::uint64_t kEvalSeed = 0;

using S = float;

struct Outcome {
  std::string name;
  FusionStrategy fusion;
  ViewStrategy views;
  double train_minutes = 0;
  std::size_t epochs = 0;
  double best_val = 0;
  std::map<std::string, EvalMetrics> metrics;  // single views plus "injected"

  double mean_single_view_improvement() const {
    double acc = 0;
    for (auto label : kViewLabels) acc += metrics.at(std::string(label)).improvement();
    return acc / static_cast<double>(kViewLabels.size());
  }
  double injected_degradation() const { return metrics.at("front").mean - metrics.at("injected").mean; }
};

Outcome run_experiment(const std::string& name, FusionStrategy fusion, ViewStrategy views, std::size_t epochs,
                       const std::vector<PreparedRecord<S>>& train_set, const std::vector<PreparedRecord<S>>& val_set,
                       const std::vector<PreparedRecord<S>>& test_set, const fs::path& workdir) {
  Outcome o{name, fusion, views};
  ModelConfig mc;
  mc.fusion = fusion;
  auto model = Model<S>::init(mc, kModelSeed);
  TrainOptions opt;
  opt.max_epochs = epochs;
  opt.view_strategy = views;
  opt.seed = kModelSeed;
  std::cerr << "[" << name << "] training " << epochs << " epochs\n";
  const auto t0 = std::chrono::steady_clock::now();
  const auto st = train(model, opt, train_set, val_set, workdir / (name + ".ckpt"), [&](const EpochRecord& r) {
    std::fprintf(stderr, "[%s] epoch %zu loss %.3f val %.3f lr %g %.0fs\n", name.c_str(), r.epoch, r.train_loss,
                 r.val_si_sdr, r.lr, r.seconds);
  });
  o.train_minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  o.epochs = st.history.size();
  o.best_val = st.best_val;
  for (auto label : kViewLabels) {
    o.metrics[std::string(label)] = evaluate(model, test_set, ViewConfig::parse(std::string(label)), kEvalSeed);
  }
  o.metrics["injected"] = evaluate(model, test_set, ViewConfig::parse("injected"), kEvalSeed);
  std::fprintf(stderr, "[%s] %.1f min, mean single-view improvement %.3f dB, front %.3f, injected %.3f\n",
               name.c_str(), o.train_minutes, o.mean_single_view_improvement(), o.metrics["front"].mean,
               o.metrics["injected"].mean);
  return o;
}

nlohmann::ordered_json to_json(const Outcome& o) {
  nlohmann::ordered_json j{{"name", o.name},
                           {"fusion", to_string(o.fusion)},
                           {"view_strategy", to_string(o.views)},
                           {"epochs", o.epochs},
                           {"train_minutes", o.train_minutes},
                           {"best_val_si_sdr", o.best_val},
                           {"mean_single_view_improvement", o.mean_single_view_improvement()},
                           {"injected_degradation", o.injected_degradation()}};
  for (const auto& [k, m] : o.metrics) {
    j["views"][k] = {{"si_sdr", m.mean}, {"si_sdr_std", m.stddev}, {"mixture_si_sdr", m.mixture_mean},
                     {"improvement", m.improvement()}};
  }
  return j;
}

void line(int criterion, bool pass, const std::string& text) {
  std::printf("CRITERION %d %s %s\n", criterion, pass ? "PASS" : "FAIL", text.c_str());
  std::fflush(stdout);
}

std::string summary(const SuiteResult& s) {
  std::string failed;
  for (const auto& c : s.checks) {
    if (!c.pass) failed += (failed.empty() ? "" : "; ") + c.name + ": " + c.detail;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s suite, %zu checks, %.2fs", s.name.c_str(), s.checks.size(), s.seconds);
  return std::string(buf) + (s.budget_seconds > 0 ? " (budget " + std::to_string(int(s.budget_seconds)) + "s)" : "") +
         (failed.empty() ? "" : " | failed: " + failed);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8"};
  std::size_t epochs = kMaxAcceptanceEpochs;
  std::string workdir = (fs::temp_directory_path() / "mvtf_acceptance").string();
  std::string report;
  bool properties_only = false;
  app.add_option("--epochs", epochs, "Training budget per model")->check(CLI::Range(std::size_t{1}, kMaxAcceptanceEpochs));
  app.add_option("--workdir", workdir, "Scratch directory for the corpus and checkpoints");
  app.add_option("--report", report, "Write all measured figures as JSON");
  app.add_flag("--properties-only", properties_only, "Run criteria 1-5 only");
  CLI11_PARSE(app, argc, argv);

  bool all = true;
  nlohmann::ordered_json out;
  const std::vector<SuiteResult> suites = run_selftest();
  for (std::size_t i = 0; i < suites.size(); ++i) {
    line(int(i) + 1, suites[i].pass(), summary(suites[i]));
    all &= suites[i].pass();
    for (const auto& c : suites[i].checks) out["suites"][suites[i].name][c.name] = {{"pass", c.pass}, {"detail", c.detail}};
  }
  if (properties_only) return all ? 0 : 3;

  fs::remove_all(workdir);
  fs::create_directories(workdir);
  const fs::path corpus = fs::path(workdir) / "corpus";
  DatasetConfig dc;  // 200/50/50 one-second mixtures
  const auto records = build_dataset(dc, kCorpusSeed, corpus);
  const ModelConfig mc;  // F=129, H=32, 2 blocks, D=64
  const auto train_set = prepare_records<S>(corpus, records, Split::kTrain, mc);
  const auto val_set = prepare_records<S>(corpus, records, Split::kVal, mc);
  const auto test_set = prepare_records<S>(corpus, records, Split::kTest, mc);
  std::fprintf(stderr, "corpus %zu/%zu/%zu, mixture test SI-SDR %.3f dB\n", train_set.size(), val_set.size(),
               test_set.size(), evaluate_mixture(test_set).mean);

  const auto mvtf = run_experiment("mvtf_random3", FusionStrategy::kMvtf, ViewStrategy::kRandom3, epochs, train_set,
                                   val_set, test_set, workdir);
  const auto front = run_experiment("mvtf_front3", FusionStrategy::kMvtf, ViewStrategy::kFront3, epochs, train_set,
                                    val_set, test_set, workdir);
  const auto add = run_experiment("projected_addition_random3", FusionStrategy::kProjectedAddition,
                                  ViewStrategy::kRandom3, epochs, train_set, val_set, test_set, workdir);
  const auto attn = run_experiment("attention_random3", FusionStrategy::kAttention, ViewStrategy::kRandom3, epochs,
                                   train_set, val_set, test_set, workdir);

  const double gain = mvtf.mean_single_view_improvement();
  const bool c6 = gain >= kMinImprovementDb && mvtf.train_minutes < kMaxTrainMinutes;
  line(6, c6, fmt("mean single-view improvement %.3f dB (gate >= 1 dB), front view %.3f dB, training %.1f min "
                  "(gate < 45)", gain, mvtf.metrics.at("front").improvement(), mvtf.train_minutes) +
                  " over " + std::to_string(mvtf.epochs) + " epochs");

  const bool c7 = mvtf.injected_degradation() < front.injected_degradation();
  line(7, c7, fmt("injected-view degradation random3 %.3f dB vs front3 %.3f dB (gate: random3 strictly smaller)",
                  mvtf.injected_degradation(), front.injected_degradation()));

  const double add_gain = add.mean_single_view_improvement();
  const bool c8 = gain >= add_gain;
  line(8, c8, fmt("MVTF %.3f dB vs projected addition %.3f dB (gate: MVTF >= addition); attention %.3f dB (ungated)",
                  gain, add_gain, attn.mean_single_view_improvement()));
  all &= c6 && c7 && c8;

  for (const auto* o : {&mvtf, &front, &add, &attn}) out["experiments"].push_back(to_json(*o));
  out["criteria"] = {{"6", c6}, {"7", c7}, {"8", c8}};
  if (!report.empty()) std::ofstream(report) << out.dump(2) << "\n";
  return all ? 0 : 3;
}
