// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include "mvtf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mvtf/seeding.hpp"

namespace mvtf {
namespace {

namespace fs = std::filesystem;

template <typename S>
std::vector<Tensor<S>> snapshot(const ParamList<S>& params) {
  std::vector<Tensor<S>> out;
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

template <typename S>
void restore(const ParamList<S>& params, const std::vector<Tensor<S>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<S> v = params[i].var;
    v.mutable_value() = values[i];
  }
}

std::pair<double, double> mean_std(const std::vector<double>& x) {
  if (x.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

nlohmann::json history_json(const TrainState& st) {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& r : st.history) {
    h.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_si_sdr", r.val_si_sdr}, {"lr", r.lr},
                 {"improved", r.improved}});
  }
  return {{"epochs", st.epoch}, {"best_val_si_sdr", st.best_val}, {"history", h}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule and optimiser

TrainState lr_schedule_step(TrainState st, double val_si_sdr, const TrainOptions& opt) {
  st.epoch += 1;
  st.improved = std::isfinite(val_si_sdr) && val_si_sdr > st.best_val + opt.improve_delta;
  if (st.improved) {
    st.best_val = val_si_sdr;
    st.epochs_since_improve = 0;
    st.plateau = 0;
  } else {
    st.epochs_since_improve += 1;
    st.plateau += 1;
    if (st.plateau >= opt.lr_patience) {
      st.lr *= 0.5;
      st.plateau = 0;
    }
    if (st.epochs_since_improve >= opt.stop_patience) st.stop = true;
  }
  if (st.epoch >= std::min(opt.max_epochs, kMaxEpochs)) st.stop = true;
  return st;
}

template <typename S>
double clip_gradients(const std::vector<Tensor<S>*>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_gradients: max_norm must be positive");
  double sq = 0.0;
  for (const auto* g : grads) {
    for (S v : g->values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("clip_gradients: non-finite gradient");
  if (norm > max_norm) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto* g : grads) g->array() *= factor;
  }
  return norm;
}

template <typename S>
double clip_gradients(const ParamList<S>& params, double max_norm) {
  std::vector<Tensor<S>*> grads;
  for (const auto& p : params) {
    if (p.var.has_grad()) grads.push_back(&p.var.node()->grad);
  }
  return clip_gradients(grads, max_norm);
}

template <typename S>
Adam<S>::Adam(const ParamList<S>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.push_back(Tensor<S>::zeros(p.var.shape()));
    v_.push_back(Tensor<S>::zeros(p.var.shape()));
  }
}

template <typename S>
void Adam<S>::step(const ParamList<S>& params, double lr) {
  if (params.size() != m_.size()) throw InputError("Adam: parameter list changed size");
  ++t_;
  const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
  const S c1 = static_cast<S>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const S c2 = static_cast<S>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const S rate = static_cast<S>(lr), eps = static_cast<S>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<S> var = params[i].var;
    auto m = m_[i].array();
    auto v = v_[i].array();
    if (var.has_grad()) {
      const auto g = var.node()->grad.array();
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g.square();
    } else {
      m *= b1;
      v *= b2;
    }
    var.mutable_value().array() -= rate * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Data in memory

template <typename S>
std::vector<PreparedRecord<S>> prepare_records(const fs::path& root, const std::vector<MixtureRecord>& records,
                                               Split split, const ModelConfig& model) {
  const StftConfig cfg = model.stft();
  std::vector<PreparedRecord<S>> out;
  for (const auto& rec : records) {
    if (rec.split != split) continue;
    LoadedRecord loaded = load_record(root, rec);
    PreparedRecord<S> p;
    p.id = rec.id;
    const std::size_t n = loaded.mixture.size();
    Tensor<S> mix({1, n});
    for (std::size_t i = 0; i < n; ++i) mix[i] = static_cast<S>(loaded.mixture[i]);
    const AudioBatch<S> audio = normalize_mixture(mix);
    const Spectrogram<S> spec = stft(audio, cfg);
    const std::size_t frames = spec.real.dim(1);
    p.real = spec.real.reshaped({frames, cfg.bins()});
    p.imag = spec.imag.reshaped({frames, cfg.bins()});
    p.sigma = audio.sigma[0];
    p.target = Tensor<S>({n});
    for (std::size_t i = 0; i < n; ++i) p.target[i] = static_cast<S>(loaded.target[i]);
    p.target_d = std::move(loaded.target);
    p.mixture_d = std::move(loaded.mixture);
    for (auto& [label, seq] : loaded.views) {
      if (seq.dim() != model.D) {
        throw ShapeError("record " + rec.id + " view " + label + ": embedding width " + std::to_string(seq.dim()) +
                         ", model expects " + std::to_string(model.D));
      }
      p.views.emplace(label, upsample_time(seq, frames).template cast<S>());
      p.raw_views.emplace(label, std::move(seq));
    }
    out.push_back(std::move(p));
  }
  return out;
}

template <typename S>
Batch<S> make_batch(const std::vector<PreparedRecord<S>>& records, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DegenerateInput("make_batch: empty batch");
  const auto& first = records.at(indices.front());
  const std::size_t b = indices.size(), t = first.real.dim(0), f = first.real.dim(1), n = first.target.size();
  Batch<S> batch{{Tensor<S>({b, t, f}), Tensor<S>({b, t, f})}, Tensor<S>({b}), Tensor<S>({b, n}), n};
  for (std::size_t k = 0; k < b; ++k) {
    const auto& r = records.at(indices[k]);
    if (r.real.shape() != first.real.shape() || r.target.size() != n) {
      throw ShapeError("make_batch: record " + r.id + " differs in length from " + first.id);
    }
    std::copy_n(r.real.data(), t * f, batch.spec.real.data() + k * t * f);
    std::copy_n(r.imag.data(), t * f, batch.spec.imag.data() + k * t * f);
    std::copy_n(r.target.data(), n, batch.target.data() + k * n);
    batch.sigma[k] = r.sigma;
  }
  return batch;
}

template <typename S>
std::vector<Tensor<S>> batch_views(const std::vector<PreparedRecord<S>>& records,
                                   const std::vector<std::size_t>& indices, const std::vector<std::string>& labels) {
  if (labels.empty() || labels.size() > kFusedViews) throw InputError("between one and three views are required");
  std::vector<std::string> distinct = labels;
  if (std::all_of(labels.begin(), labels.end(), [&](const std::string& l) { return l == labels.front(); })) {
    distinct = {labels.front()};
  }
  std::vector<Tensor<S>> out;
  for (const auto& label : distinct) {
    if (!is_known_view(label)) throw InputError("unknown view label '" + label + "'");
    const auto& first = records.at(indices.front()).views.at(label);
    const std::size_t t = first.dim(0), d = first.dim(1);
    Tensor<S> stacked({indices.size(), t, d});
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto it = records.at(indices[k]).views.find(label);
      if (it == records.at(indices[k]).views.end()) throw InputError("record lacks view '" + label + "'");
      std::copy_n(it->second.data(), t * d, stacked.data() + k * t * d);
    }
    out.push_back(std::move(stacked));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

template <typename S>
Trainer<S>::Trainer(Model<S>& model, const TrainOptions& opt)
    : model_(model),
      opt_(opt),
      params_(model.parameters()),
      adam_(params_, opt.beta1, opt.beta2, opt.adam_eps),
      lr_(opt.lr) {}

template <typename S>
double Trainer<S>::step(const Batch<S>& batch, const std::vector<Tensor<S>>& views, std::uint64_t role_seed) {
  for (const auto& p : params_) {
    Var<S> v = p.var;
    v.zero_grad();
  }
  double loss_value = 0.0;
  {
    const Var<S> out = model_.forward(batch.spec, batch.sigma, batch.length, views, role_seed);
    const Var<S> loss = si_sdr_loss(out, Var<S>::constant(batch.target));
    loss_value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(loss_value)) throw NumericalError("training loss is not finite");
    loss.backward();
  }
  last_norm_ = clip_gradients(params_, opt_.clip);
  adam_.step(params_, lr_);
  return loss_value;
}

template <typename S>
TrainState train(Model<S>& model, const TrainOptions& opt, const std::vector<PreparedRecord<S>>& train_set,
                 const std::vector<PreparedRecord<S>>& val_set, const fs::path& checkpoint,
                 const EpochCallback& on_epoch) {
  opt.validate();
  if (train_set.empty()) throw InputError("training split is empty");
  if (val_set.empty()) throw InputError("validation split is empty");
  Trainer<S> trainer(model, opt);
  const ParamList<S> params = model.parameters();
  std::vector<Tensor<S>> best = snapshot(params);
  TrainState st = TrainState::initial(opt.lr);
  const ViewConfig val_views = ViewConfig::parse("front");

  const auto save_best = [&](const TrainState& state) {
    restore(params, best);
    if (!checkpoint.empty()) save_checkpoint(checkpoint, model, history_json(state));
  };

  while (!st.stop) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string tag = std::to_string(st.epoch);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(opt.seed, "order/" + tag));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng() % i]);
    Rng view_rng(derive_seed(opt.seed, "views/" + tag));

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + opt.batch)));
      const auto labels = select_training_views(opt.view_strategy, view_rng);
      const std::uint64_t roles = derive_seed(opt.seed, "roles/" + tag + "/" + std::to_string(batches));
      try {
        loss_sum += trainer.step(make_batch(train_set, idx), batch_views(train_set, idx, labels), roles);
      } catch (const NumericalError&) {
        save_best(st);
        throw;
      }
      ++batches;
    }

    const EvalMetrics val = evaluate(model, val_set, val_views, opt.seed, opt.batch);
    EpochRecord rec;
    rec.lr = st.lr;
    st = lr_schedule_step(st, val.mean, opt);
    if (st.improved) best = snapshot(params);
    rec.epoch = st.epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_si_sdr = val.mean;
    rec.improved = st.improved;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.history.push_back(rec);
    trainer.set_lr(st.lr);
    if (on_epoch) on_epoch(rec);
  }
  save_best(st);
  return st;
}

// ---------------------------------------------------------------------------
// Evaluation

ViewConfig ViewConfig::parse(const std::string& text) {
  ViewConfig vc;
  if (text == "injected") {
    vc.kind = Kind::kInjected;
    vc.labels = {std::string(kViewLabels.front())};
    return vc;
  }
  std::stringstream ss(text);
  std::string label;
  while (std::getline(ss, label, ',')) {
    label.erase(0, label.find_first_not_of(" \t"));
    label.erase(label.find_last_not_of(" \t") + 1);
    if (!is_known_view(label)) throw InputError("unknown view label '" + label + "'");
    vc.labels.push_back(label);
  }
  if (vc.labels.empty() || vc.labels.size() > kFusedViews) {
    throw InputError("--views takes one to three labels, got '" + text + "'");
  }
  vc.kind = vc.labels.size() == 1 ? Kind::kSingle : Kind::kCombo;
  return vc;
}

std::string ViewConfig::describe() const {
  if (kind == Kind::kInjected) return "injected";
  std::string out;
  for (std::size_t i = 0; i < kFusedViews; ++i) {
    if (i) out += ',';
    out += labels[i % labels.size()];
  }
  return out;
}

template <typename S>
EvalMetrics evaluate_mixture(const std::vector<PreparedRecord<S>>& records) {
  EvalMetrics m;
  m.views = "mixture";
  m.items = records.size();
  for (const auto& r : records) m.per_item.push_back(si_sdr<double>(r.mixture_d, r.target_d));
  std::tie(m.mean, m.stddev) = mean_std(m.per_item);
  m.mixture_mean = m.mean;
  m.mixture_stddev = m.stddev;
  return m;
}

template <typename S>
EvalMetrics evaluate(const Model<S>& model, const std::vector<PreparedRecord<S>>& records, const ViewConfig& views,
                     std::uint64_t seed, std::size_t batch) {
  if (records.empty()) throw InputError("evaluation split is empty");
  if (batch == 0) throw ConfigError("evaluation batch must be positive");
  NoGradGuard no_grad;
  EvalMetrics m;
  m.views = views.describe();
  m.items = records.size();
  std::vector<double> mixture;
  for (std::size_t start = 0, b = 0; start < records.size(); start += batch, ++b) {
    std::vector<std::size_t> idx(std::min(batch, records.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch<S> bt = make_batch(records, idx);
    std::vector<Tensor<S>> view_tensors;
    if (views.kind == ViewConfig::Kind::kInjected) {
      const std::size_t t = bt.spec.real.dim(1);
      const std::size_t d = records[idx.front()].views.begin()->second.dim(1);
      Tensor<S> stacked({idx.size(), t, d});
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& r = records[idx[k]];
        const auto inj = injected_test_view(r.raw_views, seed, r.id);
        const Tensor<S> up = upsample_time(inj.injection.sequence, t).template cast<S>();
        std::copy_n(up.data(), t * d, stacked.data() + k * t * d);
      }
      view_tensors.push_back(std::move(stacked));
    } else {
      view_tensors = batch_views(records, idx, views.labels);
    }
    const std::uint64_t roles = derive_seed(seed, "eval-roles/" + std::to_string(b));
    const Tensor<S> out = model.forward(bt.spec, bt.sigma, bt.length, view_tensors, roles).value();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& r = records[idx[k]];
      std::vector<double> est(bt.length);
      for (std::size_t i = 0; i < bt.length; ++i) est[i] = static_cast<double>(out[k * bt.length + i]);
      m.per_item.push_back(si_sdr<double>(est, r.target_d));
      mixture.push_back(si_sdr<double>(r.mixture_d, r.target_d));
    }
  }
  std::tie(m.mean, m.stddev) = mean_std(m.per_item);
  std::tie(m.mixture_mean, m.mixture_stddev) = mean_std(mixture);
  return m;
}

template <typename S>
std::vector<double> extract(const Model<S>& model, std::span<const double> mixture,
                            const std::vector<ViewEmbeddingSeq>& views, std::uint64_t role_seed) {
  if (views.empty() || views.size() > kFusedViews) {
    throw InputError("extract: expected 1 to 3 view sequences, got " + std::to_string(views.size()));
  }
  const std::size_t n = mixture.size();
  Tensor<S> mix({1, n});
  for (std::size_t i = 0; i < n; ++i) mix[i] = static_cast<S>(mixture[i]);
  const AudioBatch<S> audio = normalize_mixture(mix);
  const Spectrogram<S> spec = stft(audio, model.config.stft());
  const std::size_t frames = spec.real.dim(1);
  std::vector<Tensor<S>> up;
  for (const auto& v : views) {
    if (v.dim() != model.config.D) {
      throw ShapeError("extract: view " + v.view_label + " has width " + std::to_string(v.dim()) +
                       ", model expects " + std::to_string(model.config.D));
    }
    up.push_back(upsample_time(v, frames).template cast<S>().reshaped({1, frames, model.config.D}));
  }
  NoGradGuard guard;
  const auto out = model.forward(spec, audio.sigma, n, up, role_seed).value();
  return std::vector<double>(out.values().begin(), out.values().end());
}

#define MVTF_INSTANTIATE_TRAINING(S)                                                                             \
  template double clip_gradients(const std::vector<Tensor<S>*>&, double);                                       \
  template double clip_gradients(const ParamList<S>&, double);                                                  \
  template class Adam<S>;                                                                                       \
  template std::vector<PreparedRecord<S>> prepare_records(const fs::path&, const std::vector<MixtureRecord>&,   \
                                                          Split, const ModelConfig&);                           \
  template Batch<S> make_batch(const std::vector<PreparedRecord<S>>&, const std::vector<std::size_t>&);         \
  template std::vector<Tensor<S>> batch_views(const std::vector<PreparedRecord<S>>&,                            \
                                              const std::vector<std::size_t>&, const std::vector<std::string>&); \
  template class Trainer<S>;                                                                                    \
  template TrainState train(Model<S>&, const TrainOptions&, const std::vector<PreparedRecord<S>>&,              \
                            const std::vector<PreparedRecord<S>>&, const fs::path&, const EpochCallback&);      \
  template EvalMetrics evaluate_mixture(const std::vector<PreparedRecord<S>>&);                                 \
  template EvalMetrics evaluate(const Model<S>&, const std::vector<PreparedRecord<S>>&, const ViewConfig&,       \
                                std::uint64_t, std::size_t);                                                  \
  template std::vector<double> extract(const Model<S>&, std::span<const double>,                                \
                                       const std::vector<ViewEmbeddingSeq>&, std::uint64_t);

MVTF_INSTANTIATE_TRAINING(float)
MVTF_INSTANTIATE_TRAINING(double)

}  // namespace mvtf
