// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mvtf/config.hpp"
#include "mvtf/selftest.hpp"
#include "mvtf/training.hpp"
#include "mvtf/wav.hpp"

namespace mvtf::cli {
namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { kF32, kF64 };

Precision precision_from_env() {
  const char* v = std::getenv("MVTF_PRECISION");
  if (v == nullptr || std::string(v).empty() || std::string(v) == "f32") return Precision::kF32;
  if (std::string(v) == "f64") return Precision::kF64;
  throw UsageError("MVTF_PRECISION must be f32 or f64, got '" + std::string(v) + "'");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fnv1a_hex(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::istreambuf_iterator<char> it(is), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Config config_or_default(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw InputError(std::string(what) + " not found: " + path);
}

std::vector<MixtureRecord> manifest_records(const std::string& manifest) {
  require_file(manifest, "manifest");
  return read_manifest(manifest);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config, out;
  std::uint64_t seed = 0;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  const Config cfg = config_or_default(a.config);
  const auto records = build_dataset(cfg.data, a.seed, a.out);
  const fs::path manifest = fs::path(a.out) / kManifestName;
  out << "RESULT command=gen-data records=" << records.size() << " manifest=" << manifest.string()
      << " checksum=" << fnv1a_hex(manifest) << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, data, out;
};

template <typename S>
int train_as(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  Config cfg = config_or_default(a.config);
  if (!a.data.empty()) cfg.manifest = a.data;
  if (cfg.manifest.empty()) throw UsageError("train needs --data or data.manifest in the config");
  const auto records = manifest_records(cfg.manifest);
  const fs::path root = fs::path(cfg.manifest).parent_path();
  const auto train_set = prepare_records<S>(root, records, Split::kTrain, cfg.model);
  const auto val_set = prepare_records<S>(root, records, Split::kVal, cfg.model);
  fs::create_directories(a.out);
  const fs::path ckpt = fs::path(a.out) / "model.ckpt";
  std::ofstream history(fs::path(a.out) / "history.jsonl");
  auto model = Model<S>::init(cfg.model, cfg.train.seed);
  const auto st = train(model, cfg.train, train_set, val_set, ckpt, [&](const EpochRecord& r) {
    const nlohmann::ordered_json j{{"epoch", r.epoch},           {"train_loss", r.train_loss}, {"val_si_sdr", r.val_si_sdr},
                                   {"lr", r.lr},                 {"improved", r.improved},     {"seconds", r.seconds}};
    history << j.dump() << "\n" << std::flush;
    err << "epoch " << r.epoch << " loss " << num(r.train_loss) << " val " << num(r.val_si_sdr) << " lr " << r.lr
        << (r.improved ? " *" : "") << "\n";
  });
  out << "RESULT command=train epochs=" << st.history.size() << " best_val_si_sdr=" << num(st.best_val)
      << " final_lr=" << st.lr << " fusion=" << to_string(cfg.model.fusion)
      << " view_strategy=" << to_string(cfg.train.view_strategy) << " checkpoint=" << ckpt.string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string ckpt, data, views, report, split = "test";
  bool injected = false;
  std::uint64_t seed = 0;
  std::size_t batch = 8;
};

template <typename S>
int eval_as(const EvalArgs& a, std::ostream& out) {
  if (a.injected == !a.views.empty()) throw UsageError("eval needs exactly one of --views or --injected");
  const ViewConfig vc = ViewConfig::parse(a.injected ? "injected" : a.views);
  require_file(a.ckpt, "checkpoint");
  const auto model = load_checkpoint<S>(a.ckpt);
  const auto records = manifest_records(a.data);
  const auto items = prepare_records<S>(fs::path(a.data).parent_path(), records, parse_split(a.split), model.config);
  if (items.empty()) throw InputError("no " + a.split + " records in " + a.data);
  const EvalMetrics m = evaluate(model, items, vc, a.seed, a.batch);
  out << "RESULT command=eval views=" << m.views << " split=" << a.split << " items=" << m.items
      << " si_sdr=" << num(m.mean) << " si_sdr_std=" << num(m.stddev) << " mixture_si_sdr=" << num(m.mixture_mean)
      << " improvement=" << num(m.improvement()) << "\n";
  if (!a.report.empty()) {
    std::ofstream rep(a.report, std::ios::app);
    if (!rep) throw InputError("cannot write report " + a.report);
    const nlohmann::ordered_json j{{"command", "eval"},         {"checkpoint", a.ckpt},
                                   {"manifest", a.data},        {"split", a.split},
                                   {"views", m.views},          {"seed", a.seed},
                                   {"items", m.items},          {"si_sdr", m.mean},
                                   {"si_sdr_std", m.stddev},    {"mixture_si_sdr", m.mixture_mean},
                                   {"mixture_si_sdr_std", m.mixture_stddev},
                                   {"improvement", m.improvement()}};
    rep << j.dump() << "\n";
  }
  return kOk;
}

struct InferArgs {
  std::string ckpt, mix, emb, out;
  std::uint64_t seed = 0;
};

template <typename S>
int infer_as(const InferArgs& a, std::ostream& out) {
  require_file(a.ckpt, "checkpoint");
  require_file(a.mix, "mixture");
  const auto model = load_checkpoint<S>(a.ckpt);
  const auto wav = read_wav(a.mix);
  std::vector<ViewEmbeddingSeq> views;
  std::stringstream list(a.emb);
  for (std::string item; std::getline(list, item, ',');) {
    require_file(item, "embedding");
    views.push_back(load_embeddings(item));
  }
  const std::vector<double> mix(wav.begin(), wav.end());
  const auto est = extract(model, mix, views, a.seed);
  write_wav(a.out, std::vector<float>(est.begin(), est.end()));
  out << "RESULT command=infer samples=" << est.size() << " views=" << views.size() << " out=" << a.out << "\n";
  return kOk;
}

int selftest(bool fast, std::ostream& out) {
  const auto suites = run_selftest(SelftestOptions{fast});
  out << format_table(suites);
  std::size_t passed = 0;
  for (const auto& s : suites) passed += s.pass();
  out << "RESULT command=selftest suites=" << suites.size() << " passed=" << passed
      << " status=" << (passed == suites.size() ? "PASS" : "FAIL") << "\n";
  return passed == suites.size() ? kOk : kAcceptanceFailure;
}

template <typename F32, typename F64>
int by_precision(F32 f32, F64 f64) {
  return precision_from_env() == Precision::kF64 ? f64() : f32();
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-visual target speaker extraction with multi-view tensor fusion", "mvtf"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Synthesize a mixture corpus and its manifest");
  gen->add_option("--config", gd.config, "JSON config file")->check(CLI::ExistingFile);
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_option("--seed", gd.seed, "Corpus seed");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train a model and write the best checkpoint");
  trn->add_option("--config", tr.config, "JSON config file")->check(CLI::ExistingFile);
  trn->add_option("--data", tr.data, "Manifest (overrides data.manifest)");
  trn->add_option("--out", tr.out, "Output directory")->required();

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on one view configuration");
  evl->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  evl->add_option("--data", ev.data, "Manifest")->required();
  evl->add_option("--views", ev.views, "One label or a comma-separated combination");
  evl->add_flag("--injected", ev.injected, "Frontal view with an injected alternate-view segment");
  evl->add_option("--seed", ev.seed, "Seed for injection and attention roles");
  evl->add_option("--split", ev.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  evl->add_option("--batch", ev.batch, "Evaluation batch size")->check(CLI::PositiveNumber);
  evl->add_option("--report", ev.report, "Append a JSON line with the metrics");

  InferArgs inf;
  auto* inr = app.add_subcommand("infer", "Extract the target from one mixture file");
  inr->add_option("--ckpt", inf.ckpt, "Checkpoint")->required();
  inr->add_option("--mix", inf.mix, "Mixture WAV (16 kHz mono)")->required();
  inr->add_option("--emb", inf.emb, "One to three embedding files, comma-separated")->required();
  inr->add_option("--out", inf.out, "Output WAV")->required();
  inr->add_option("--seed", inf.seed, "Attention role seed");

  bool fast = false;
  auto* st = app.add_subcommand("selftest", "Run the invariant suites and print a pass/fail table");
  st->add_flag("--fast", fast, "Fewer repetitions");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    if (gen->parsed()) return gen_data(gd, out);
    if (trn->parsed()) return by_precision([&] { return train_as<float>(tr, out, err); },
                                          [&] { return train_as<double>(tr, out, err); });
    if (evl->parsed()) return by_precision([&] { return eval_as<float>(ev, out); },
                                          [&] { return eval_as<double>(ev, out); });
    if (inr->parsed()) return by_precision([&] { return infer_as<float>(inf, out); },
                                          [&] { return infer_as<double>(inf, out); });
    if (st->parsed()) {
      precision_from_env();
      return selftest(fast, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace mvtf::cli
