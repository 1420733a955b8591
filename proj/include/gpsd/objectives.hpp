// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training losses: sampled-softmax next-item loss (with optional side-field
// heads), the masked-token denoising variant, and binary cross-entropy for
// the discriminative stage.

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gpsd/model.hpp"

namespace gpsd {

// Scalar reference formulas.
double full_softmax_prob(std::span<const double> logits, std::size_t target);
// -log( e^t / (e^t + sum e^n) ), max-subtracted. Throws on empty negatives.
double sampled_softmax_loss(double target_logit,
                            std::span<const double> negative_logits);
// p clamped to [1e-7, 1-1e-7].
double binary_cross_entropy(double p, int label);

struct NegativeSample {
  std::vector<std::int32_t> ids;
  bool shared_per_sequence = true;
};

// `count` i.i.d. uniform ids from [low, vocab). Duplicates are kept.
NegativeSample uniform_sample(std::size_t vocab, std::size_t count,
                              std::mt19937_64& rng, std::int32_t low = 0,
                              bool shared = true);

struct LossReport {
  double total = 0;                          // sum of components
  std::map<std::string, double> components;  // per field, mean per token
  std::size_t tokens = 0;                    // predicted tokens
};

template <typename Real>
struct Objective {
  Tensor<Real> loss;  // total scaled by 1/tokens, ready for backward
  LossReport report;
};

struct NegativeConfig {
  std::size_t count = 4096;  // capped at vocab-1 per field
  bool shared = true;        // one draw per sequence, reused at every position
};

// Per field, per sequence negative ids. With sharing disabled the inner
// vector holds one set per row instead (batch*seq sets).
using FieldNegatives = std::vector<std::vector<std::vector<std::int32_t>>>;

template <typename Real>
FieldNegatives draw_negatives(const Transformer<Real>& model,
                              const TokenBatch& batch, const NegativeConfig& cfg,
                              std::mt19937_64& rng, bool side_features);

// Next-item loss summed over positions 2..L of every sequence. With side
// features enabled each extra field adds its own tied sampled-softmax term.
template <typename Real>
Objective<Real> generative_sequence_loss(Transformer<Real>& model, Graph<Real>& g,
                                         const TokenBatch& batch,
                                         const FieldNegatives& negatives,
                                         bool side_features);

template <typename Real>
Objective<Real> generative_sequence_loss(Transformer<Real>& model, Graph<Real>& g,
                                         const TokenBatch& batch,
                                         const NegativeConfig& cfg,
                                         std::mt19937_64& rng, bool side_features);

// Each valid position masked with probability `rate`; a sequence with no
// masked position gets one forced mask. Returns one flag per row.
std::vector<std::uint8_t> draw_mask(const TokenBatch& batch, double rate,
                                    std::mt19937_64& rng);

template <typename Real>
Objective<Real> denoising_loss(Transformer<Real>& model, Graph<Real>& g,
                               const TokenBatch& batch,
                               std::span<const std::uint8_t> mask,
                               const FieldNegatives& negatives,
                               bool side_features);

template <typename Real>
Objective<Real> denoising_loss(Transformer<Real>& model, Graph<Real>& g,
                               const TokenBatch& batch, double mask_rate,
                               const NegativeConfig& cfg, std::mt19937_64& rng,
                               bool side_features);

template <typename Real>
struct DiscriminativeOutput {
  Tensor<Real> loss;   // mean binary cross-entropy
  Tensor<Real> probs;  // [batch, 1]
  double loss_sum = 0;
};

// Candidate is the last valid token of every sequence in `batch`.
template <typename Real>
DiscriminativeOutput<Real> discriminative_loss(Transformer<Real>& model,
                                               Graph<Real>& g,
                                               const TokenBatch& batch,
                                               std::span<const float> labels);

}  // namespace gpsd
