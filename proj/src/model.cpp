// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/model.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mvtf/seeding.hpp"
#include "mvtf/tensor_io.hpp"

namespace mvtf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kContainerMagic = "MVTFCKPT 1";
constexpr const char* kConfigEntry = "__config__";
constexpr const char* kMetadataEntry = "__metadata__";

std::size_t get_size(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ConfigError(std::string("model.") + key + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

void ModelConfig::validate() const {
  if (F != n_fft / 2 + 1) {
    throw ConfigError("model.F = " + std::to_string(F) + " does not match n_fft " + std::to_string(n_fft) +
                      " (expected " + std::to_string(n_fft / 2 + 1) + ")");
  }
  if (H < 2) throw ConfigError("model.H must be at least 2");
  if (blocks < 1) throw ConfigError("model.blocks must be at least 1");
  if (D < 1 || rnn_hidden < 1) throw ConfigError("model.D and model.rnn_hidden must be positive");
  if (kernel % 2 == 0) throw ConfigError("model.kernel must be odd");
  stft().validate();
}

StftConfig ModelConfig::stft() const { return StftConfig::sqrt_hann(n_fft, hop); }

json to_json(const ModelConfig& c) {
  return {{"n_fft", c.n_fft}, {"hop", c.hop},   {"F", c.F},           {"H", c.H},
          {"blocks", c.blocks}, {"D", c.D},     {"kernel", c.kernel}, {"rnn_hidden", c.rnn_hidden},
          {"fusion", to_string(c.fusion)}};
}

ModelConfig model_config_from_json(const json& j) {
  static const std::set<std::string> known{"n_fft", "hop", "F", "H", "blocks", "D", "kernel", "rnn_hidden", "fusion"};
  if (!j.is_object()) throw ConfigError("model config must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown model key '" + k + "'");
  }
  ModelConfig c;
  c.n_fft = get_size(j, "n_fft", c.n_fft);
  c.hop = get_size(j, "hop", c.hop);
  c.F = get_size(j, "F", c.n_fft / 2 + 1);
  c.H = get_size(j, "H", c.H);
  c.blocks = get_size(j, "blocks", c.blocks);
  c.D = get_size(j, "D", c.D);
  c.kernel = get_size(j, "kernel", c.kernel);
  c.rnn_hidden = get_size(j, "rnn_hidden", c.rnn_hidden);
  if (j.contains("fusion")) c.fusion = parse_fusion_strategy(j.at("fusion").get<std::string>());
  c.validate();
  return c;
}

template <typename S>
Model<S> Model<S>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  // Independent streams so changing one component leaves the others' init intact.
  Rng proj_rng(derive_seed(seed, "projection"));
  Rng fusion_rng(derive_seed(seed, "fusion"));
  Rng sep_rng(derive_seed(seed, "separator"));
  m.projection = ViewProjectionParams<S>::init(cfg.kernel, cfg.D, cfg.F, proj_rng);
  m.fusion = FusionParams<S>::init(cfg.fusion, cfg.F, fusion_rng);
  m.separator = SeparatorParams<S>::init(cfg.H, cfg.rnn_hidden, cfg.blocks, sep_rng);
  return m;
}

template <typename S>
ParamList<S> Model<S>::parameters() const {
  ParamList<S> out;
  projection.collect("projection", out);
  fusion.collect("fusion", out);
  separator.collect("separator", out);
  return out;
}

template <typename S>
Var<S> Model<S>::forward(const Spectrogram<S>& mixture_spec, const Tensor<S>& sigma, std::size_t length,
                         const std::vector<Tensor<S>>& views, std::uint64_t role_seed) const {
  if (views.empty() || views.size() > kFusedViews) {
    throw InputError("model expects 1 to 3 views, got " + std::to_string(views.size()));
  }
  ViewSet<S> vs;
  for (const auto& v : views) vs.views.push_back(project_to_subspace(Var<S>::constant(v), projection));
  return separate(mixture_spec, sigma, length, vs, fusion, separator, config.stft(), role_seed);
}

void write_container(const fs::path& path, const BlobMap& blobs) {
  std::ostringstream index;
  index << kContainerMagic << '\n';
  std::size_t offset = 0;
  for (const auto& [name, bytes] : blobs) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw InputError("checkpoint entry name '" + name + "' must be non-empty without whitespace");
    }
    index << name << ' ' << offset << ' ' << bytes.size() << '\n';
    offset += bytes.size();
  }
  index << "end\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << index.str();
  for (const auto& [name, bytes] : blobs) out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

BlobMap read_container(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kContainerMagic) throw FormatError(path.string() + ": not a checkpoint");
  struct Entry {
    std::string name;
    std::size_t offset, bytes;
  };
  std::vector<Entry> entries;
  while (true) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": truncated index");
    if (line == "end") break;
    std::istringstream ls(line);
    Entry e;
    if (!(ls >> e.name >> e.offset >> e.bytes)) throw FormatError(path.string() + ": bad index line '" + line + "'");
    entries.push_back(e);
  }
  const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  BlobMap blobs;
  for (const auto& e : entries) {
    if (e.offset > body.size() || e.bytes > body.size() - e.offset) {
      throw FormatError(path.string() + ": entry '" + e.name + "' runs past end of file");
    }
    blobs.emplace(e.name, body.substr(e.offset, e.bytes));
  }
  return blobs;
}

template <typename S>
void save_checkpoint(const fs::path& path, const Model<S>& model, const json& metadata) {
  BlobMap blobs;
  blobs[kConfigEntry] = to_json(model.config).dump();
  blobs[kMetadataEntry] = metadata.dump();
  for (const auto& p : model.parameters()) {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, p.var.value());
    blobs[p.name] = os.str();
  }
  write_container(path, blobs);
}

template <typename S>
Model<S> load_checkpoint(const fs::path& path) {
  const BlobMap blobs = read_container(path);
  const auto cfg_it = blobs.find(kConfigEntry);
  if (cfg_it == blobs.end()) throw FormatError(path.string() + ": missing model config");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(json::parse(cfg_it->second));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad model config: " + e.what());
  }
  Model<S> model = Model<S>::init(cfg, 0);
  for (auto& p : model.parameters()) {
    const auto it = blobs.find(p.name);
    if (it == blobs.end()) throw FormatError(path.string() + ": missing parameter " + p.name);
    std::istringstream is(it->second, std::ios::binary);
    Tensor<S> t = read_tensor<S>(is);
    if (t.shape() != p.var.shape()) throw ShapeError("checkpoint " + p.name, p.var.shape(), t.shape());
    p.var.mutable_value() = std::move(t);
  }
  return model;
}

json checkpoint_metadata(const fs::path& path) {
  const BlobMap blobs = read_container(path);
  const auto it = blobs.find(kMetadataEntry);
  if (it == blobs.end()) return json::object();
  return json::parse(it->second);
}

template struct Model<float>;
template struct Model<double>;
template void save_checkpoint(const fs::path&, const Model<float>&, const json&);
template void save_checkpoint(const fs::path&, const Model<double>&, const json&);
template Model<float> load_checkpoint(const fs::path&);
template Model<double> load_checkpoint(const fs::path&);

}  // namespace mvtf
