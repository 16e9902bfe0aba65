// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/config.hpp"

#include <fstream>
#include <set>

namespace mvtf {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& section, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + section + "." + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

void read_size(const json& j, const char* key, std::size_t& out, const std::string& section) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("config key '" + section + "." + key + "' must be a non-negative integer");
  }
  out = v.get<std::size_t>();
}

}  // namespace

void TrainOptions::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (max_epochs == 0 || max_epochs > kMaxEpochs) throw ConfigError("train.max_epochs must be in [1, 100]");
  if (!(clip > 0.0)) throw ConfigError("train.clip must be positive");
  if (improve_delta < 0.0) throw ConfigError("train.improve_delta must be non-negative");
  if (lr_patience == 0 || stop_patience == 0) throw ConfigError("train patience values must be positive");
}

void Config::validate() const {
  data.validate();
  model.validate();
  train.validate();
  if (model.D != data.synth.dim) {
    throw ConfigError("model.D (" + std::to_string(model.D) + ") must equal synth.dim (" +
                      std::to_string(data.synth.dim) + ")");
  }
}

Config config_from_json(const json& j) {
  reject_unknown(j, "<root>", {"data", "synth", "model", "fusion", "train"});
  Config c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, "data", {"manifest", "train", "val", "test", "speakers", "samples", "snr_min", "snr_max"});
    read(d, "manifest", c.manifest, "data");
    read_size(d, "train", c.data.train, "data");
    read_size(d, "val", c.data.val, "data");
    read_size(d, "test", c.data.test, "data");
    read_size(d, "speakers", c.data.speakers, "data");
    read_size(d, "samples", c.data.samples, "data");
    read(d, "snr_min", c.data.snr_min, "data");
    read(d, "snr_max", c.data.snr_max, "data");
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    reject_unknown(s, "synth", {"dim", "noise", "distortion", "content_seed"});
    read_size(s, "dim", c.data.synth.dim, "synth");
    read(s, "noise", c.data.synth.noise, "synth");
    read(s, "distortion", c.data.synth.distortion, "synth");
    read(s, "content_seed", c.data.synth.content_seed, "synth");
  }
  json model = j.value("model", json::object());
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    reject_unknown(f, "fusion", {"strategy"});
    if (f.contains("strategy")) model["fusion"] = f.at("strategy");
  }
  if (model.contains("fusion") && j.contains("model") && j.at("model").contains("fusion")) {
    throw ConfigError("set the fusion strategy under fusion.strategy");
  }
  c.model = model_config_from_json(model);
  if (!j.contains("synth") || !j.at("synth").contains("dim")) c.data.synth.dim = c.model.D;
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, "train", {"lr", "batch", "max_epochs", "seed", "view_strategy", "clip", "improve_delta",
                                "lr_patience", "stop_patience", "beta1", "beta2", "adam_eps"});
    read(t, "lr", c.train.lr, "train");
    read_size(t, "batch", c.train.batch, "train");
    read_size(t, "max_epochs", c.train.max_epochs, "train");
    read(t, "seed", c.train.seed, "train");
    if (t.contains("view_strategy")) c.train.view_strategy = parse_view_strategy(t.at("view_strategy").get<std::string>());
    read(t, "clip", c.train.clip, "train");
    read(t, "improve_delta", c.train.improve_delta, "train");
    read_size(t, "lr_patience", c.train.lr_patience, "train");
    read_size(t, "stop_patience", c.train.stop_patience, "train");
    read(t, "beta1", c.train.beta1, "train");
    read(t, "beta2", c.train.beta2, "train");
    read(t, "adam_eps", c.train.adam_eps, "train");
  }
  c.validate();
  return c;
}

json to_json(const Config& c) {
  json model = to_json(c.model);
  const std::string fusion = model.at("fusion");
  model.erase("fusion");
  return {
      {"data",
       {{"manifest", c.manifest}, {"train", c.data.train}, {"val", c.data.val}, {"test", c.data.test},
        {"speakers", c.data.speakers}, {"samples", c.data.samples}, {"snr_min", c.data.snr_min},
        {"snr_max", c.data.snr_max}}},
      {"synth",
       {{"dim", c.data.synth.dim}, {"noise", c.data.synth.noise}, {"distortion", c.data.synth.distortion},
        {"content_seed", c.data.synth.content_seed}}},
      {"model", model},
      {"fusion", {{"strategy", fusion}}},
      {"train",
       {{"lr", c.train.lr}, {"batch", c.train.batch}, {"max_epochs", c.train.max_epochs}, {"seed", c.train.seed},
        {"view_strategy", to_string(c.train.view_strategy)}, {"clip", c.train.clip},
        {"improve_delta", c.train.improve_delta}, {"lr_patience", c.train.lr_patience},
        {"stop_patience", c.train.stop_patience}, {"beta1", c.train.beta1}, {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps}}},
  };
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace mvtf
