// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include "gpsd/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gpsd {

double full_softmax_prob(std::span<const double> logits, std::size_t target) {
  if (logits.size() < 2) throw ShapeError("full softmax needs at least 2 logits");
  if (target >= logits.size()) throw std::out_of_range("target outside logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  return std::exp(logits[target] - mx) / z;
}

double sampled_softmax_loss(double target_logit,
                            std::span<const double> negative_logits) {
  if (negative_logits.empty()) {
    throw std::invalid_argument("sampled softmax needs at least one negative");
  }
  double mx = target_logit;
  for (double l : negative_logits) mx = std::max(mx, l);
  double z = std::exp(target_logit - mx);
  for (double l : negative_logits) z += std::exp(l - mx);
  return mx + std::log(z) - target_logit;
}

double binary_cross_entropy(double p, int label) {
  const double pc = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return label ? -std::log(pc) : -std::log(1.0 - pc);
}

NegativeSample uniform_sample(std::size_t vocab, std::size_t count,
                              std::mt19937_64& rng, std::int32_t low, bool shared) {
  if (count == 0) throw std::invalid_argument("negative count must be >= 1");
  if (low < 0 || static_cast<std::size_t>(low) >= vocab) {
    throw std::invalid_argument("empty sampling range");
  }
  std::uniform_int_distribution<std::int32_t> dist(
      low, static_cast<std::int32_t>(vocab) - 1);
  NegativeSample s;
  s.shared_per_sequence = shared;
  s.ids.resize(count);
  for (auto& id : s.ids) id = dist(rng);
  return s;
}

namespace {

std::vector<std::size_t> loss_fields(const ModelConfig& cfg, bool side_features) {
  std::vector<std::size_t> out{0};
  if (side_features) {
    for (std::size_t f = 1; f < cfg.fields.size(); ++f) out.push_back(f);
  }
  return out;
}

template <typename Real>
Objective<Real> aggregate(Transformer<Real>& model, Graph<Real>& g,
                          const Tensor<Real>& hidden, const TokenBatch& batch,
                          const std::vector<std::vector<std::int32_t>>& targets,
                          const FieldNegatives& negatives,
                          std::span<const std::size_t> fields, std::size_t tokens) {
  if (negatives.size() != fields.size()) {
    throw std::invalid_argument("one negative set list per loss field required");
  }
  Objective<Real> out;
  out.report.tokens = tokens;
  Tensor<Real> total;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& field = model.config().fields[fields[i]];
    SampledSoftmaxTargets spec;
    const std::size_t groups = negatives[i].size();
    if (groups == batch.batch) {
      spec.rows_per_group = batch.seq;
    } else if (groups == batch.rows()) {
      spec.rows_per_group = 1;
    } else {
      throw ShapeError("negatives must be per sequence or per row");
    }
    spec.targets = targets[i];
    spec.negatives = negatives[i];
    auto term = sampled_softmax_loss(
        hidden, model.bind(g, Transformer<Real>::table_name(field.name)), spec);
    out.report.components[field.name] =
        static_cast<double>(term.item()) / static_cast<double>(tokens);
    out.report.total += out.report.components[field.name];
    total = i == 0 ? term : add(total, term);
  }
  out.loss = scale(total, Real(1) / static_cast<Real>(tokens));
  return out;
}

}  // namespace

template <typename Real>
FieldNegatives draw_negatives(const Transformer<Real>& model,
                              const TokenBatch& batch, const NegativeConfig& cfg,
                              std::mt19937_64& rng, bool side_features) {
  FieldNegatives out;
  for (auto f : loss_fields(model.config(), side_features)) {
    const std::size_t vocab = model.config().fields[f].size;
    const std::size_t n = std::min(cfg.count, vocab - 1);
    const std::size_t groups = cfg.shared ? batch.batch : batch.rows();
    std::vector<std::vector<std::int32_t>> sets(groups);
    for (auto& s : sets) s = uniform_sample(vocab, n, rng, kFirstRealId, cfg.shared).ids;
    out.push_back(std::move(sets));
  }
  return out;
}

template <typename Real>
Objective<Real> generative_sequence_loss(Transformer<Real>& model, Graph<Real>& g,
                                         const TokenBatch& batch,
                                         const FieldNegatives& negatives,
                                         bool side_features) {
  if (batch.has_candidate) {
    throw std::invalid_argument("generative loss takes behavior-only batches");
  }
  std::size_t tokens = 0;
  for (auto len : batch.lengths) {
    if (len < 2) throw std::invalid_argument("sequence too short for next-item loss");
    tokens += len - 1;
  }
  const auto fields = loss_fields(model.config(), side_features);
  std::vector<std::vector<std::int32_t>> targets;
  for (auto f : fields) {
    std::vector<std::int32_t> t(batch.rows(), -1);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      for (std::size_t pos = 0; pos + 1 < batch.lengths[b]; ++pos) {
        t[b * batch.seq + pos] = batch.ids[f][b * batch.seq + pos + 1];
      }
    }
    targets.push_back(std::move(t));
  }
  auto hidden = model.encode(g, batch);
  return aggregate(model, g, hidden, batch, targets, negatives, fields, tokens);
}

template <typename Real>
Objective<Real> generative_sequence_loss(Transformer<Real>& model, Graph<Real>& g,
                                         const TokenBatch& batch,
                                         const NegativeConfig& cfg,
                                         std::mt19937_64& rng, bool side_features) {
  auto negatives = draw_negatives(model, batch, cfg, rng, side_features);
  return generative_sequence_loss(model, g, batch, negatives, side_features);
}

std::vector<std::uint8_t> draw_mask(const TokenBatch& batch, double rate,
                                    std::mt19937_64& rng) {
  if (rate < 0 || rate > 1) throw std::invalid_argument("mask rate outside [0,1]");
  std::vector<std::uint8_t> mask(batch.rows(), 0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const std::size_t len = batch.lengths[b];
    if (len == 0) continue;
    bool any = false;
    for (std::size_t t = 0; t < len; ++t) {
      if (coin(rng) < rate) {
        mask[b * batch.seq + t] = 1;
        any = true;
      }
    }
    if (!any) {
      std::uniform_int_distribution<std::size_t> pick(0, len - 1);
      mask[b * batch.seq + pick(rng)] = 1;
    }
  }
  return mask;
}

template <typename Real>
Objective<Real> denoising_loss(Transformer<Real>& model, Graph<Real>& g,
                               const TokenBatch& batch,
                               std::span<const std::uint8_t> mask,
                               const FieldNegatives& negatives,
                               bool side_features) {
  if (model.config().direction != Direction::kBidirectional) {
    throw std::invalid_argument("denoising requires a bidirectional model");
  }
  if (mask.size() != batch.rows()) throw ShapeError("one mask flag per row required");
  for (auto len : batch.lengths) {
    if (len < 2) throw std::invalid_argument("sequence too short for denoising loss");
  }
  const auto fields = loss_fields(model.config(), side_features);
  TokenBatch masked = batch;
  std::vector<std::vector<std::int32_t>> targets(fields.size(),
                                                 std::vector<std::int32_t>(batch.rows(), -1));
  std::size_t tokens = 0;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      const std::size_t r = b * batch.seq + t;
      if (!mask[r]) continue;
      ++tokens;
      for (std::size_t i = 0; i < fields.size(); ++i) {
        targets[i][r] = batch.ids[fields[i]][r];
      }
      for (auto& ids : masked.ids) ids[r] = kMaskId;
    }
  }
  if (tokens == 0) throw std::invalid_argument("no masked positions");
  auto hidden = model.encode(g, masked);
  return aggregate(model, g, hidden, batch, targets, negatives, fields, tokens);
}

template <typename Real>
Objective<Real> denoising_loss(Transformer<Real>& model, Graph<Real>& g,
                               const TokenBatch& batch, double mask_rate,
                               const NegativeConfig& cfg, std::mt19937_64& rng,
                               bool side_features) {
  if (model.config().direction != Direction::kBidirectional) {
    throw std::invalid_argument("denoising requires a bidirectional model");
  }
  auto mask = draw_mask(batch, mask_rate, rng);
  auto negatives = draw_negatives(model, batch, cfg, rng, side_features);
  return denoising_loss(model, g, batch, mask, negatives, side_features);
}

template <typename Real>
DiscriminativeOutput<Real> discriminative_loss(Transformer<Real>& model,
                                               Graph<Real>& g,
                                               const TokenBatch& batch,
                                               std::span<const float> labels) {
  if (labels.size() != batch.batch) throw ShapeError("one label per example required");
  std::vector<std::int32_t> rows(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    if (batch.lengths[b] == 0) throw std::invalid_argument("empty example");
    rows[b] = static_cast<std::int32_t>(b * batch.seq + batch.lengths[b] - 1);
  }
  auto hidden = model.encode(g, batch);
  auto state = gather(hidden, std::span<const std::int32_t>(rows));
  DiscriminativeOutput<Real> out;
  out.probs = model.discriminative_head(g, state);
  auto total = binary_cross_entropy(out.probs, labels);
  out.loss_sum = static_cast<double>(total.item());
  out.loss = scale(total, Real(1) / static_cast<Real>(batch.batch));
  return out;
}

#define GPSD_INSTANTIATE_OBJECTIVES(Real)                                          \
  template FieldNegatives draw_negatives(const Transformer<Real>&,                  \
                                         const TokenBatch&, const NegativeConfig&,  \
                                         std::mt19937_64&, bool);                   \
  template Objective<Real> generative_sequence_loss(                               \
      Transformer<Real>&, Graph<Real>&, const TokenBatch&, const FieldNegatives&,   \
      bool);                                                                        \
  template Objective<Real> generative_sequence_loss(                               \
      Transformer<Real>&, Graph<Real>&, const TokenBatch&, const NegativeConfig&,   \
      std::mt19937_64&, bool);                                                      \
  template Objective<Real> denoising_loss(Transformer<Real>&, Graph<Real>&,         \
                                          const TokenBatch&,                        \
                                          std::span<const std::uint8_t>,            \
                                          const FieldNegatives&, bool);             \
  template Objective<Real> denoising_loss(Transformer<Real>&, Graph<Real>&,         \
                                          const TokenBatch&, double,                \
                                          const NegativeConfig&, std::mt19937_64&,  \
                                          bool);                                    \
  template DiscriminativeOutput<Real> discriminative_loss(                         \
      Transformer<Real>&, Graph<Real>&, const TokenBatch&, std::span<const float>);

GPSD_INSTANTIATE_OBJECTIVES(float)
GPSD_INSTANTIATE_OBJECTIVES(double)

#undef GPSD_INSTANTIATE_OBJECTIVES

}  // namespace gpsd
