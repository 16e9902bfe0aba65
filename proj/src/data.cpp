// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "mvtf/seeding.hpp"
#include "mvtf/signal.hpp"
#include "mvtf/wav.hpp"

namespace mvtf {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr double kSampleRateD = static_cast<double>(kSampleRate);
constexpr double kUtteranceRms = 0.1;

// Portable uniform draw in [0,1).
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }
std::size_t uniform_index(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

// Gaussian from two portable uniforms (Box-Muller).
double gaussian(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

struct Resonator {
  double a1 = 0, a2 = 0, gain = 0, y1 = 0, y2 = 0;

  void tune(double centre_hz, double bandwidth_hz) {
    const double r = std::exp(-M_PI * bandwidth_hz / kSampleRateD);
    a1 = 2.0 * r * std::cos(2.0 * M_PI * centre_hz / kSampleRateD);
    a2 = -r * r;
    gain = 1.0 - r;
  }

  double step(double x) {
    const double y = gain * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

std::vector<double> to_double(const std::vector<float>& x) { return {x.begin(), x.end()}; }

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic speakers

SynthSpeaker SynthSpeaker::create(std::string speaker_id, std::uint64_t generator_seed) {
  Rng rng(generator_seed);
  SynthSpeaker s{std::move(speaker_id), generator_seed, {}};
  auto& t = s.timbre;
  t.f0_hz = std::exp(uniform(rng, std::log(85.0), std::log(260.0)));
  t.pitch_range = uniform(rng, 0.05, 0.2);
  t.formant_hz = {uniform(rng, 300.0, 800.0), uniform(rng, 900.0, 2200.0), uniform(rng, 2300.0, 3300.0)};
  t.bandwidth_hz = {uniform(rng, 60.0, 120.0), uniform(rng, 90.0, 160.0), uniform(rng, 120.0, 220.0)};
  t.rolloff = uniform(rng, 0.6, 1.6);
  t.noise_mix = uniform(rng, 0.03, 0.2);
  t.syllable_rate = uniform(rng, 3.5, 6.0);
  return s;
}

std::vector<float> synth_utterance(const SynthSpeaker& speaker, std::uint64_t utterance_seed, std::size_t samples) {
  const TimbreParams& tp = speaker.timbre;
  Rng rng(utterance_seed);
  std::vector<double> env(samples, 0.0), pitch(samples, tp.f0_hz);
  std::vector<std::array<double, 3>> formants(samples, tp.formant_hz);

  // Syllable plan: pitch glide, vowel (formant scaling) and loudness per syllable.
  std::size_t pos = static_cast<std::size_t>(uniform(rng, 0.0, 0.08) * kSampleRateD);
  while (pos < samples) {
    const auto len = static_cast<std::size_t>(uniform(rng, 0.5, 1.1) / tp.syllable_rate * kSampleRateD);
    const auto gap = static_cast<std::size_t>(uniform(rng, 0.1, 0.6) / tp.syllable_rate * kSampleRateD);
    const double p0 = tp.f0_hz * (1.0 + tp.pitch_range * uniform(rng, -1.0, 1.0));
    const double p1 = tp.f0_hz * (1.0 + tp.pitch_range * uniform(rng, -1.0, 1.0));
    const double amp = uniform(rng, 0.5, 1.0);
    std::array<double, 3> vowel{};
    for (std::size_t k = 0; k < 3; ++k) vowel[k] = tp.formant_hz[k] * uniform(rng, 0.85, 1.15);
    for (std::size_t i = 0; i < len && pos + i < samples; ++i) {
      const double frac = static_cast<double>(i) / static_cast<double>(len);
      const double w = std::sin(M_PI * frac);
      env[pos + i] = amp * w * w;
      pitch[pos + i] = p0 + (p1 - p0) * frac;
      formants[pos + i] = vowel;
    }
    pos += len + gap;
  }

  std::array<Resonator, 3> res;
  constexpr std::array<double, 3> kFormantGain{1.0, 0.7, 0.4};
  std::vector<double> out(samples, 0.0);
  const double min_pitch = *std::min_element(pitch.begin(), pitch.end());
  std::vector<double> weight(static_cast<std::size_t>(3800.0 / min_pitch) + 2);
  for (std::size_t k = 1; k < weight.size(); ++k) weight[k] = std::pow(static_cast<double>(k), -tp.rolloff);
  std::array<double, 3> tuned{-1.0, -1.0, -1.0};
  double phase = 0.0;
  for (std::size_t n = 0; n < samples; ++n) {
    phase += 2.0 * M_PI * pitch[n] / kSampleRateD;
    if (phase > 2.0 * M_PI) phase -= 2.0 * M_PI;
    double excitation = 0.0;
    if (env[n] > 0.0) {
      const auto harmonics = static_cast<int>(3800.0 / pitch[n]);
      // sin(k p) by the angle-addition recurrence.
      const double c2 = 2.0 * std::cos(phase);
      double s_prev = 0.0, s_cur = std::sin(phase);
      for (int k = 1; k <= harmonics; ++k) {
        excitation += weight[k] * s_cur;
        const double s_next = c2 * s_cur - s_prev;
        s_prev = s_cur;
        s_cur = s_next;
      }
      excitation = env[n] * (excitation + tp.noise_mix * 4.0 * gaussian(rng));
    }
    double y = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (formants[n][k] != tuned[k]) {
        res[k].tune(formants[n][k], tp.bandwidth_hz[k]);
        tuned[k] = formants[n][k];
      }
      y += kFormantGain[k] * res[k].step(excitation);
    }
    out[n] = y;
  }

  const double rms = std::sqrt(signal_power(out));
  std::vector<float> result(samples, 0.0f);
  if (rms > 0.0) {
    for (std::size_t n = 0; n < samples; ++n) result[n] = static_cast<float>(out[n] * kUtteranceRms / rms);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Mixing

double signal_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::inner_product(x.begin(), x.end(), x.begin(), 0.0) / static_cast<double>(x.size());
}

double interferer_gain(std::span<const double> target, std::span<const double> interferer, double snr_db) {
  if (target.size() != interferer.size()) {
    throw ShapeError("make_mixture", Shape{target.size()}, Shape{interferer.size()});
  }
  const double pt = signal_power(target), pi = signal_power(interferer);
  if (!(pt > 0.0)) throw DegenerateInput("make_mixture: target has zero power");
  if (!(pi > 0.0)) throw DegenerateInput("make_mixture: interferer has zero power");
  return std::sqrt(pt / (pi * std::pow(10.0, snr_db / 10.0)));
}

double measure_snr_db(std::span<const double> target, std::span<const double> scaled_interferer) {
  return 10.0 * std::log10(signal_power(target) / signal_power(scaled_interferer));
}

std::vector<double> make_mixture(std::span<const double> target, std::span<const double> interferer,
                                 double snr_db) {
  const double g = interferer_gain(target, interferer, snr_db);
  std::vector<double> mix(target.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = target[i] + g * interferer[i];
  return mix;
}

// ---------------------------------------------------------------------------
// Corpus

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw FormatError("unknown split '" + std::string(name) + "'");
}

void DatasetConfig::validate() const {
  if (samples < 256) throw ConfigError("data.samples must be at least one STFT frame (256)");
  if (!(snr_min <= snr_max) || snr_min < -10.0 || snr_max > 10.0) {
    throw ConfigError("SNR range must lie within [-10, 10] dB");
  }
  synth.validate();
}

const std::vector<SynthSpeaker>& SpeakerPools::of(Split split) const {
  switch (split) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

SpeakerPools allocate_speakers(const DatasetConfig& cfg, std::uint64_t seed) {
  // Each split needs two speakers to form a mixture; val and test get a fifth
  // of the pool each.
  const std::size_t held = std::max<std::size_t>(2, (cfg.speakers + 2) / 5);
  if (cfg.speakers < 2 * held + 2) {
    throw ConfigError("speaker pool of " + std::to_string(cfg.speakers) +
                      " is too small for disjoint train/val/test splits (need at least " +
                      std::to_string(2 * held + 2) + ")");
  }
  SpeakerPools pools;
  for (std::size_t i = 0; i < cfg.speakers; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "spk%03zu", i);
    auto spk = SynthSpeaker::create(id, derive_seed(seed, std::string("speaker/") + id));
    auto& pool = i < cfg.speakers - 2 * held ? pools.train : (i < cfg.speakers - held ? pools.val : pools.test);
    pool.push_back(std::move(spk));
  }
  return pools;
}

RecordDraw draw_record(std::uint64_t seed, std::string_view record_id, std::size_t pool_size, double snr_min,
                       double snr_max) {
  if (pool_size < 2) throw ConfigError("a mixture needs at least two speakers");
  const std::uint64_t rs = derive_seed(seed, record_id);
  Rng rng(rs);
  RecordDraw d;
  d.target_index = uniform_index(rng, pool_size);
  d.interferer_index = (d.target_index + 1 + uniform_index(rng, pool_size - 1)) % pool_size;
  d.snr_db = uniform(rng, snr_min, snr_max);
  d.target_seed = derive_seed(rs, "target");
  d.interferer_seed = derive_seed(rs, "interferer");
  d.view_seed = derive_seed(rs, "views");
  return d;
}

std::string record_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05zu", to_string(split).c_str(), index);
  return buf;
}

std::vector<MixtureRecord> build_dataset(const DatasetConfig& cfg, std::uint64_t seed, const fs::path& out_dir) {
  cfg.validate();
  const SpeakerPools pools = allocate_speakers(cfg, seed);
  fs::create_directories(out_dir);
  std::vector<MixtureRecord> records;
  const std::array<std::pair<Split, std::size_t>, 3> plan{
      {{Split::kTrain, cfg.train}, {Split::kVal, cfg.val}, {Split::kTest, cfg.test}}};
  for (const auto& [split, count] : plan) {
    const auto& pool = pools.of(split);
    for (std::size_t i = 0; i < count; ++i) {
      MixtureRecord rec;
      rec.id = record_id(split, i);
      rec.split = split;
      const RecordDraw d = draw_record(seed, rec.id, pool.size(), cfg.snr_min, cfg.snr_max);
      rec.snr_db = d.snr_db;
      const auto& tspk = pool[d.target_index];
      const auto& ispk = pool[d.interferer_index];
      const auto target = synth_utterance(tspk, d.target_seed, cfg.samples);
      const auto interferer = synth_utterance(ispk, d.interferer_seed, cfg.samples);

      rec.target_path = "speakers/" + tspk.speaker_id + "/" + rec.id + "_target.wav";
      rec.interferer_path = "speakers/" + ispk.speaker_id + "/" + rec.id + "_interferer.wav";
      fs::create_directories(out_dir / "speakers" / tspk.speaker_id);
      fs::create_directories(out_dir / "speakers" / ispk.speaker_id);
      write_wav(out_dir / rec.target_path, target);
      write_wav(out_dir / rec.interferer_path, interferer);

      fs::create_directories(out_dir / "views" / rec.id);
      for (const auto& label : kViewLabels) {
        const std::string rel = "views/" + rec.id + "/" + std::string(label) + ".mvtf";
        save_embeddings(out_dir / rel, synth_view_embeddings(target, label, cfg.synth, d.view_seed));
        rec.view_paths.emplace(label, rel);
      }
      records.push_back(std::move(rec));
    }
  }
  write_manifest(out_dir / kManifestName, records);
  return records;
}

void write_manifest(const fs::path& path, const std::vector<MixtureRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write manifest " + path.string());
  for (const auto& r : records) {
    ordered_json views = ordered_json::object();
    for (const auto& [label, p] : r.view_paths) views[label] = p;
    ordered_json j;
    j["id"] = r.id;
    j["target_path"] = r.target_path;
    j["interferer_path"] = r.interferer_path;
    j["snr_db"] = r.snr_db;
    j["view_paths"] = views;
    j["split"] = to_string(r.split);
    out << j.dump() << '\n';
  }
  if (!out) throw InputError("failed writing manifest " + path.string());
}

std::vector<MixtureRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  std::vector<MixtureRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      MixtureRecord r;
      r.id = j.at("id").get<std::string>();
      r.target_path = j.at("target_path").get<std::string>();
      r.interferer_path = j.at("interferer_path").get<std::string>();
      r.snr_db = j.at("snr_db").get<double>();
      r.split = parse_split(j.at("split").get<std::string>());
      for (const auto& [label, p] : j.at("view_paths").items()) {
        if (!is_known_view(label)) throw FormatError("unknown view label '" + label + "'");
        r.view_paths.emplace(label, p.get<std::string>());
      }
      if (r.view_paths.size() != kViewLabels.size()) throw FormatError("view_paths must list all 7 views");
      if (!(r.snr_db >= -10.0 && r.snr_db <= 10.0)) throw FormatError("snr_db outside [-10, 10]");
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
  }
  return records;
}

std::string speaker_of(std::string_view source_path) {
  const fs::path p(source_path);
  return p.parent_path().filename().string();
}

LoadedRecord load_record(const fs::path& root, const MixtureRecord& record) {
  LoadedRecord out;
  out.record = record;
  out.target = to_double(read_wav(root / record.target_path));
  const auto interferer = to_double(read_wav(root / record.interferer_path));
  const double g = interferer_gain(out.target, interferer, record.snr_db);
  out.scaled_interferer.resize(interferer.size());
  for (std::size_t i = 0; i < interferer.size(); ++i) out.scaled_interferer[i] = g * interferer[i];
  out.mixture.resize(out.target.size());
  for (std::size_t i = 0; i < out.mixture.size(); ++i) out.mixture[i] = out.target[i] + out.scaled_interferer[i];
  for (const auto& [label, p] : record.view_paths) {
    auto seq = load_embeddings(root / p);
    seq.view_label = label;
    out.views.emplace(label, std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// View selection and mixed-view injection

ViewStrategy parse_view_strategy(std::string_view name) {
  if (name == "random3") return ViewStrategy::kRandom3;
  if (name == "repeat1") return ViewStrategy::kRepeat1;
  if (name == "front3") return ViewStrategy::kFront3;
  if (name == "random1") return ViewStrategy::kRandom1;
  if (name == "front1") return ViewStrategy::kFront1;
  throw ConfigError("unknown view strategy '" + std::string(name) +
                    "' (expected random3, repeat1, front3, random1 or front1)");
}

std::string to_string(ViewStrategy strategy) {
  switch (strategy) {
    case ViewStrategy::kRandom3: return "random3";
    case ViewStrategy::kRepeat1: return "repeat1";
    case ViewStrategy::kFront3: return "front3";
    case ViewStrategy::kRandom1: return "random1";
    case ViewStrategy::kFront1: return "front1";
  }
  return "unknown";
}

std::vector<std::string> select_training_views(ViewStrategy strategy, Rng& rng) {
  const std::string front(kViewLabels.front());
  switch (strategy) {
    case ViewStrategy::kRandom3: {
      std::array<std::size_t, kViewLabels.size()> idx{};
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < 3; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      return {std::string(kViewLabels[idx[0]]), std::string(kViewLabels[idx[1]]), std::string(kViewLabels[idx[2]])};
    }
    case ViewStrategy::kRepeat1: {
      const std::string v(kViewLabels[uniform_index(rng, kViewLabels.size())]);
      return {v, v, v};
    }
    case ViewStrategy::kFront3: return {front, front, front};
    case ViewStrategy::kRandom1: return {std::string(kViewLabels[uniform_index(rng, kViewLabels.size())])};
    case ViewStrategy::kFront1: return {front};
  }
  return {front};
}

Injection inject_view_segments(const ViewEmbeddingSeq& frontal, const ViewEmbeddingSeq& alternate, Rng& rng) {
  if (frontal.embeddings.shape() != alternate.embeddings.shape()) {
    throw ShapeError("inject_view_segments", frontal.embeddings.shape(), alternate.embeddings.shape());
  }
  const std::size_t t = frontal.frames();
  // Integer bounds avoid rounding drift in expressions like 0.3 * 10.
  const std::size_t len_lo = std::max<std::size_t>(1, (2 * t + 9) / 10);
  const std::size_t len_hi = (4 * t) / 10;
  const std::size_t win_lo = (3 * t + 9) / 10;
  const std::size_t win_hi = (8 * t) / 10;
  if (len_hi < len_lo || win_hi < win_lo + len_lo) {
    throw DegenerateInput("inject_view_segments: " + std::to_string(t) + " frames cannot hold a segment");
  }
  const double frac = uniform(rng, 0.2, 0.4);
  std::size_t len = static_cast<std::size_t>(std::llround(frac * static_cast<double>(t)));
  len = std::clamp(len, len_lo, std::min(len_hi, win_hi - win_lo));
  const std::size_t start = win_lo + uniform_index(rng, win_hi - len - win_lo + 1);

  Injection out{frontal, start, len};
  const std::size_t d = frontal.dim();
  for (std::size_t i = start; i < start + len; ++i) {
    std::copy_n(alternate.embeddings.data() + i * d, d, out.sequence.embeddings.data() + i * d);
  }
  return out;
}

InjectedView injected_test_view(const std::map<std::string, ViewEmbeddingSeq>& views, std::uint64_t seed,
                                std::string_view record_id) {
  Rng rng(derive_seed(seed, std::string("inject/") + std::string(record_id)));
  const std::string alt(kViewLabels[1 + uniform_index(rng, kViewLabels.size() - 1)]);
  const auto front = views.find(std::string(kViewLabels.front()));
  const auto other = views.find(alt);
  if (front == views.end() || other == views.end()) {
    throw InputError("injected_test_view: record " + std::string(record_id) + " lacks front or " + alt);
  }
  return {inject_view_segments(front->second, other->second, rng), alt};
}

}  // namespace mvtf
