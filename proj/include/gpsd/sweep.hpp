// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scaling sweep: pretrain + discriminative training per model code and
// seed on shared data, then power-law fits over dense parameter counts.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpsd/analysis.hpp"
#include "gpsd/engine.hpp"

namespace gpsd {

struct SweepEntry {
  std::string code;           // discriminative model
  std::string pretrain_code;  // empty: same as code
  double peak_lr = 0;         // discriminative peak LR; 0 keeps the default
};

struct SweepOptions {
  std::vector<SweepEntry> entries;
  ModelConfig base;  // fields, lengths, direction; size taken from codes
  Direction pretrain_direction = Direction::kCausal;
  PretrainOptions pretrain;
  TrainOptions train;
  Strategy strategy = Strategy::kSTSF;
  std::vector<std::uint64_t> seeds = {1};
  std::filesystem::path out_dir;  // per-run metrics when set
};

struct SweepRun {
  ScalingPoint point;  // validation AUC and loss
  double test_auc = 0;
  double gap = 0;
  bool ok = false;
  std::string error;
  double seconds = 0;
};

struct SweepResult {
  std::vector<SweepRun> runs;          // in execution order
  std::vector<ScalingPoint> points;    // successful runs by dense count, seed
  std::optional<PowerLawFit> auc_fit;  // over per-code seed means
  std::optional<PowerLawFit> loss_fit;
};

// A failing sub-run is recorded and the sweep continues.
SweepResult scaling_sweep(const SweepOptions& options, std::span<const ItemSequence> pretrain_train,
                          std::span<const ItemSequence> pretrain_valid, const DataSplit& data);

// Fits over per-code means; requires at least 4 distinct dense counts.
void fit_sweep(SweepResult& result);

std::string sweep_summary(const SweepResult& result);

}  // namespace gpsd
