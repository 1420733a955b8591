// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "gpsd/tensor.hpp"

namespace gpsd {

// Linear warmup to `peak`, then cosine decay to floor_fraction * peak at
// total_steps.
class Schedule {
 public:
  Schedule(double peak_lr, std::size_t warmup_steps, std::size_t total_steps,
           double floor_fraction = 0.1);

  double lr_at(std::size_t step) const;

  double peak() const { return peak_; }
  std::size_t warmup_steps() const { return warmup_; }
  std::size_t total_steps() const { return total_; }

 private:
  double peak_;
  std::size_t warmup_;
  std::size_t total_;
  double floor_fraction_;
};

// Rescales all unfrozen gradients jointly so their L2 norm is at most
// max_norm. Returns the norm before clipping. Non-finite gradients throw.
template <typename Real>
double clip_global_norm(ParameterStore<Real>& params, double max_norm);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

template <typename Real>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // One update of every unfrozen parameter. Weight decay applies only to
  // parameters flagged for it. Frozen parameters are skipped entirely.
  void step(ParameterStore<Real>& params, double lr);

  std::size_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  bool has_state(const std::string& name) const { return state_.count(name) > 0; }

 private:
  struct Moments {
    std::vector<Real> first;
    std::vector<Real> second;
  };

  AdamWConfig config_;
  std::size_t step_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace gpsd
