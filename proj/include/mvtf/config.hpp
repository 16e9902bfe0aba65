// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "mvtf/data.hpp"
#include "mvtf/model.hpp"

namespace mvtf {

struct TrainOptions {
  double lr = 1e-3;
  std::size_t batch = 8;
  std::size_t max_epochs = 100;  // hard ceiling of 100
  std::uint64_t seed = 0;
  ViewStrategy view_strategy = ViewStrategy::kRandom3;
  double clip = 1.0;            // global L2 gradient norm
  double improve_delta = 0.0;   // validation gain (dB) that counts as improvement
  std::size_t lr_patience = 3;  // flat epochs before halving
  std::size_t stop_patience = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

inline constexpr std::size_t kMaxEpochs = 100;

/// One JSON file drives generation, training and evaluation. Sections:
/// data, synth, model, fusion, train. Every key is optional; see README.
struct Config {
  std::string manifest;  // data.manifest
  DatasetConfig data;    // data.* counts and synth.*
  ModelConfig model;     // model.* and fusion.strategy
  TrainOptions train;    // train.*

  void validate() const;
};

Config config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Config& cfg);
Config load_config(const std::filesystem::path& path);

}  // namespace mvtf
