// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvtf/nn.hpp"
#include "mvtf/visual.hpp"

namespace mvtf {

// ---------------------------------------------------------------------------
// Synthetic speakers

struct TimbreParams {
  double f0_hz = 140.0;
  double pitch_range = 0.12;  // relative syllable-to-syllable pitch spread
  std::array<double, 3> formant_hz{500.0, 1500.0, 2500.0};
  std::array<double, 3> bandwidth_hz{80.0, 120.0, 180.0};
  double rolloff = 1.0;       // harmonic amplitude ~ k^-rolloff
  double noise_mix = 0.1;
  double syllable_rate = 4.5;  // per second
};

struct SynthSpeaker {
  std::string speaker_id;
  std::uint64_t generator_seed = 0;
  TimbreParams timbre;

  /// Timbre drawn deterministically from the seed.
  static SynthSpeaker create(std::string speaker_id, std::uint64_t generator_seed);
};

/// Voiced syllables separated by pauses, filtered through the speaker's
/// formants; RMS 0.1 over the whole utterance.
std::vector<float> synth_utterance(const SynthSpeaker& speaker, std::uint64_t utterance_seed,
                                   std::size_t samples);

// ---------------------------------------------------------------------------
// Mixing

double signal_power(std::span<const double> x);

/// Gain g such that 10 log10(P_target / (g^2 P_interferer)) == snr_db.
double interferer_gain(std::span<const double> target, std::span<const double> interferer, double snr_db);

double measure_snr_db(std::span<const double> target, std::span<const double> scaled_interferer);

/// target + g * interferer with g from interferer_gain.
std::vector<double> make_mixture(std::span<const double> target, std::span<const double> interferer,
                                 double snr_db);

// ---------------------------------------------------------------------------
// Corpus

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split split);
Split parse_split(std::string_view name);

struct MixtureRecord {
  std::string id;
  std::string target_path;      // relative to the manifest directory
  std::string interferer_path;
  double snr_db = 0.0;
  std::map<std::string, std::string> view_paths;  // label -> embedding file
  Split split = Split::kTrain;
};

struct DatasetConfig {
  std::size_t train = 200;
  std::size_t val = 50;
  std::size_t test = 50;
  std::size_t speakers = 20;
  std::size_t samples = 16000;
  double snr_min = -10.0;
  double snr_max = 10.0;
  SynthConfig synth;

  void validate() const;
};

/// Speaker ids per split; splits never share a speaker.
struct SpeakerPools {
  std::vector<SynthSpeaker> train, val, test;
  const std::vector<SynthSpeaker>& of(Split split) const;
};

SpeakerPools allocate_speakers(const DatasetConfig& cfg, std::uint64_t seed);

/// Per-record random choices, seeded by (seed, record id) alone.
struct RecordDraw {
  std::size_t target_index = 0;
  std::size_t interferer_index = 0;
  double snr_db = 0.0;
  std::uint64_t target_seed = 0;
  std::uint64_t interferer_seed = 0;
  std::uint64_t view_seed = 0;
};

RecordDraw draw_record(std::uint64_t seed, std::string_view record_id, std::size_t pool_size, double snr_min,
                       double snr_max);

std::string record_id(Split split, std::size_t index);

/// Writes sources, all seven view embeddings per record and manifest.jsonl
/// under `out_dir`. Returns the records in manifest order.
std::vector<MixtureRecord> build_dataset(const DatasetConfig& cfg, std::uint64_t seed,
                                         const std::filesystem::path& out_dir);

inline constexpr const char* kManifestName = "manifest.jsonl";

void write_manifest(const std::filesystem::path& path, const std::vector<MixtureRecord>& records);
std::vector<MixtureRecord> read_manifest(const std::filesystem::path& path);

/// Sources are stored as speakers/<speaker id>/<file>.
std::string speaker_of(std::string_view source_path);

struct LoadedRecord {
  MixtureRecord record;
  std::vector<double> target;
  std::vector<double> scaled_interferer;
  std::vector<double> mixture;
  std::map<std::string, ViewEmbeddingSeq> views;
};

LoadedRecord load_record(const std::filesystem::path& root, const MixtureRecord& record);

// ---------------------------------------------------------------------------
// View selection and mixed-view injection

enum class ViewStrategy { kRandom3, kRepeat1, kFront3, kRandom1, kFront1 };
ViewStrategy parse_view_strategy(std::string_view name);
std::string to_string(ViewStrategy strategy);

std::vector<std::string> select_training_views(ViewStrategy strategy, Rng& rng);

struct Injection {
  ViewEmbeddingSeq sequence;
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Replaces one contiguous window of the frontal sequence with the alternate
/// view. Window length is 20-40% of the sequence and the window lies inside
/// the 30%-80% span.
Injection inject_view_segments(const ViewEmbeddingSeq& frontal, const ViewEmbeddingSeq& alternate, Rng& rng);

/// Mixed-view test construction for one record: the alternate view is drawn
/// uniformly from the six non-frontal views with a seed fixed by the record.
struct InjectedView {
  Injection injection;
  std::string alternate_label;
};

InjectedView injected_test_view(const std::map<std::string, ViewEmbeddingSeq>& views, std::uint64_t seed,
                                std::string_view record_id);

}  // namespace mvtf
