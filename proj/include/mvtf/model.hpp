// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvtf/separator.hpp"
#include "mvtf/visual.hpp"

namespace mvtf {

struct ModelConfig {
  std::size_t n_fft = 256;
  std::size_t hop = 128;
  std::size_t F = 129;          // frequency bins, n_fft / 2 + 1
  std::size_t H = 32;           // separator channels
  std::size_t blocks = 2;
  std::size_t D = 64;           // embedding width
  std::size_t kernel = 3;       // temporal conv width of the view projection
  std::size_t rnn_hidden = 16;  // per-direction grid-block recurrence width
  FusionStrategy fusion = FusionStrategy::kMvtf;

  void validate() const;
  StftConfig stft() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

template <typename S>
struct Model {
  ModelConfig config;
  ViewProjectionParams<S> projection;  // shared by every view
  FusionParams<S> fusion;
  SeparatorParams<S> separator;

  static Model init(const ModelConfig& cfg, std::uint64_t seed);
  ParamList<S> parameters() const;

  /// views: available view embeddings, each (B,T_a,D) at the STFT frame rate.
  /// One to three views; fewer than three are replicated cyclically.
  Var<S> forward(const Spectrogram<S>& mixture_spec, const Tensor<S>& sigma, std::size_t length,
                 const std::vector<Tensor<S>>& views, std::uint64_t role_seed = 0) const;
};

/// Single-file container: a text index ("MVTFCKPT 1", then "<name> <offset>
/// <bytes>" lines, then "end") followed by the blobs. Tensors are stored in
/// the MVTF tensor format; "__config__" holds the model config as JSON.
template <typename S>
void save_checkpoint(const std::filesystem::path& path, const Model<S>& model,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Loads into either precision; tensors are converted on read.
template <typename S>
Model<S> load_checkpoint(const std::filesystem::path& path);

nlohmann::json checkpoint_metadata(const std::filesystem::path& path);

using BlobMap = std::map<std::string, std::string>;
void write_container(const std::filesystem::path& path, const BlobMap& blobs);
BlobMap read_container(const std::filesystem::path& path);

}  // namespace mvtf
