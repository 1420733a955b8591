// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Generative pretraining and discriminative training loops.
//
// Both loops shuffle deterministically per epoch, clip the global gradient
// norm, step AdamW under the warmup+cosine schedule and append evaluation
// rows to a metrics CSV (`step,split,loss,auc,gap,lr,epoch`). A run is a
// pure function of its options, data and model seed.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpsd/data.hpp"
#include "gpsd/model.hpp"
#include "gpsd/objectives.hpp"
#include "gpsd/optim.hpp"
#include "gpsd/transfer.hpp"

namespace gpsd {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::size_t batch_size = 512;
  std::size_t epochs = 10;
  std::size_t max_steps = 0;  // 0: epochs * batches per epoch
  double peak_lr = 5e-4;
  std::size_t warmup = 500;
  double lr_floor = 0.1;
  double clip_norm = 1.0;
  AdamWConfig adamw;
  std::uint64_t seed = 1;          // batch order and negative sampling
  std::size_t eval_interval = 0;   // steps; 0 evaluates at epoch ends only
  std::size_t train_auc_window = 50;  // batches
  std::size_t eval_batch_size = 1024;
  // Called with the step number after every evaluation point.
  std::function<void(std::size_t)> on_eval;
};

// Warmup actually used: the configured value, or total/10 (at least 1)
// when the configured warmup would not leave any decay phase.
std::size_t effective_warmup(std::size_t warmup, std::size_t total_steps);

enum class PretrainObjective { kGenerative, kDenoising };

PretrainObjective parse_pretrain_objective(std::string_view text);
std::string_view pretrain_objective_name(PretrainObjective o);

struct PretrainOptions {
  TrainOptions train;
  PretrainObjective objective = PretrainObjective::kGenerative;
  NegativeConfig negatives;
  double mask_rate = 0.15;
  bool side_features = false;  // also predict non-item fields
};

struct MetricsRow {
  std::size_t step = 0;
  std::string split;
  double loss = 0;
  std::optional<double> auc;
  std::optional<double> gap;
  double lr = 0;
  double epoch = 0;
};

class MetricsWriter {
 public:
  MetricsWriter() = default;  // discards rows
  explicit MetricsWriter(const std::filesystem::path& path);

  void write(const MetricsRow& row);
  static std::string format(const MetricsRow& row);

 private:
  std::unique_ptr<std::ofstream> out_;
};

struct PretrainResult {
  std::vector<MetricsRow> rows;
  std::size_t steps = 0;
  double final_train_loss = 0;  // mean over the last epoch
  std::optional<double> final_valid_loss;
  double seconds = 0;
};

template <typename Real>
PretrainResult pretrain(Transformer<Real>& model, std::span<const ItemSequence> train,
                        std::span<const ItemSequence> valid, const PretrainOptions& options,
                        MetricsWriter* metrics = nullptr);

struct EvalResult {
  double loss = 0;
  double auc = 0;
  std::size_t examples = 0;
  std::vector<float> scores;
};

// Forward pass over every example in order; throws AucError on a
// single-class set.
template <typename Real>
EvalResult evaluate(Transformer<Real>& model, std::span<const DiscriminativeExample> examples,
                    std::size_t batch_size = 1024);

struct DiscriminativeResult {
  std::vector<MetricsRow> rows;
  std::size_t steps = 0;
  double train_auc = 0;  // sliding window at the final evaluation
  double valid_auc = 0;
  double valid_loss = 0;
  double gap = 0;
  double test_auc = 0;
  double test_loss = 0;
  TransferReport transfer;
  double seconds = 0;
};

// Trains `model` as is (strategy already applied).
template <typename Real>
DiscriminativeResult train_discriminative(Transformer<Real>& model, const DataSplit& data,
                                          const TrainOptions& options,
                                          MetricsWriter* metrics = nullptr);

// Applies `strategy` from `pretrained` (null for NT), then trains.
template <typename Real>
DiscriminativeResult train_discriminative(Transformer<Real>& model, const DataSplit& data,
                                          const TrainOptions& options, Strategy strategy,
                                          const Checkpoint* pretrained,
                                          MetricsWriter* metrics = nullptr);

}  // namespace gpsd
