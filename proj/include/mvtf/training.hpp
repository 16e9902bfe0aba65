// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mvtf/config.hpp"
#include "mvtf/data.hpp"
#include "mvtf/model.hpp"

namespace mvtf {

// ---------------------------------------------------------------------------
// Schedule and optimiser

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_si_sdr = 0.0;
  double lr = 0.0;  // rate used during this epoch
  bool improved = false;
  double seconds = 0.0;
};

struct TrainState {
  std::size_t epoch = 0;
  double lr = 1e-3;
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improve = 0;  // drives early stopping
  std::size_t plateau = 0;               // drives halving; reset after each halving
  bool improved = false;                 // last step improved on best_val
  bool stop = false;
  std::vector<EpochRecord> history;

  static TrainState initial(double lr) {
    TrainState st;
    st.lr = lr;
    return st;
  }
};

/// Advances the schedule by one epoch given its validation score.
TrainState lr_schedule_step(TrainState st, double val_si_sdr, const TrainOptions& opt = {});

/// Scales gradients in place so their global L2 norm is at most max_norm and
/// returns the norm before clipping. Non-finite entries throw NumericalError.
template <typename S>
double clip_gradients(const std::vector<Tensor<S>*>& grads, double max_norm);

template <typename S>
double clip_gradients(const ParamList<S>& params, double max_norm);

template <typename S>
class Adam {
 public:
  Adam(const ParamList<S>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const ParamList<S>& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

// ---------------------------------------------------------------------------
// Data in memory

/// One record ready for the network: spectrogram of the normalised mixture,
/// target at its original scale and view embeddings at the STFT frame rate.
template <typename S>
struct PreparedRecord {
  std::string id;
  Tensor<S> real, imag;  // (T,F)
  S sigma = 1;
  Tensor<S> target;      // (N)
  std::vector<double> target_d, mixture_d;
  std::map<std::string, ViewEmbeddingSeq> raw_views;  // video rate
  std::map<std::string, Tensor<S>> views;             // (T,D)
};

template <typename S>
std::vector<PreparedRecord<S>> prepare_records(const std::filesystem::path& root,
                                               const std::vector<MixtureRecord>& records, Split split,
                                               const ModelConfig& model);

template <typename S>
struct Batch {
  Spectrogram<S> spec;  // (B,T,F)
  Tensor<S> sigma;      // (B)
  Tensor<S> target;     // (B,N)
  std::size_t length = 0;
};

template <typename S>
Batch<S> make_batch(const std::vector<PreparedRecord<S>>& records, const std::vector<std::size_t>& indices);

/// (B,T,D) per view. A label list naming one view several times collapses to
/// that single view, which the model replicates.
template <typename S>
std::vector<Tensor<S>> batch_views(const std::vector<PreparedRecord<S>>& records,
                                   const std::vector<std::size_t>& indices, const std::vector<std::string>& labels);

// ---------------------------------------------------------------------------
// Training

template <typename S>
class Trainer {
 public:
  Trainer(Model<S>& model, const TrainOptions& opt);
  /// One Adam step on -mean SI-SDR; returns the loss before the update.
  double step(const Batch<S>& batch, const std::vector<Tensor<S>>& views, std::uint64_t role_seed);
  double last_grad_norm() const { return last_norm_; }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  Model<S>& model_;
  TrainOptions opt_;
  ParamList<S> params_;
  Adam<S> adam_;
  double lr_;
  double last_norm_ = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs the schedule until it stops, leaves the best-validation parameters
/// in `model` and, if `checkpoint` is non-empty, writes them there. On a
/// non-finite loss the best parameters so far are saved before rethrowing.
template <typename S>
TrainState train(Model<S>& model, const TrainOptions& opt, const std::vector<PreparedRecord<S>>& train_set,
                 const std::vector<PreparedRecord<S>>& val_set, const std::filesystem::path& checkpoint = {},
                 const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Evaluation

struct ViewConfig {
  enum class Kind { kSingle, kCombo, kInjected };
  Kind kind = Kind::kSingle;
  std::vector<std::string> labels;

  /// "front", "front,left30,right30" or "injected". Unknown labels throw InputError.
  static ViewConfig parse(const std::string& text);
  static ViewConfig single(const std::string& label) { return parse(label); }
  /// Labels after replication to three, or "injected".
  std::string describe() const;
};

struct EvalMetrics {
  std::string views;
  std::size_t items = 0;
  double mean = 0.0, stddev = 0.0;                  // separated vs target, dB
  double mixture_mean = 0.0, mixture_stddev = 0.0;  // unprocessed mixture vs target, dB
  std::vector<double> per_item;

  double improvement() const { return mean - mixture_mean; }
};

/// Mixture baseline only; no model involved.
template <typename S>
EvalMetrics evaluate_mixture(const std::vector<PreparedRecord<S>>& records);

template <typename S>
EvalMetrics evaluate(const Model<S>& model, const std::vector<PreparedRecord<S>>& records, const ViewConfig& views,
                     std::uint64_t seed = 0, std::size_t batch = 8);

/// Single-item inference: mixture waveform plus one to three view sequences
/// (video rate, any fps) to the estimated target waveform.
template <typename S>
std::vector<double> extract(const Model<S>& model, std::span<const double> mixture,
                            const std::vector<ViewEmbeddingSeq>& views, std::uint64_t role_seed = 0);

}  // namespace mvtf
