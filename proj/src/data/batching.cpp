// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>
#include <random>

#include "gpsd/data.hpp"

namespace gpsd {

namespace {

const std::vector<std::int32_t>& field_ids(const ItemSequence& s, const std::string& field) {
  if (field == kItemField) return s.items;
  if (field == "category") return s.categories;
  throw ConfigError("no data column for field '" + field + "'");
}

std::int32_t candidate_id(const DiscriminativeExample& e, const std::string& field) {
  if (field == kItemField) return e.item;
  if (field == "category") return e.category;
  throw ConfigError("no data column for field '" + field + "'");
}

TokenBatch empty_batch(std::size_t batch, std::size_t seq, std::size_t fields) {
  TokenBatch out;
  out.batch = batch;
  out.seq = seq;
  out.ids.assign(fields, std::vector<std::int32_t>(batch * seq, kPadId));
  out.segments.assign(batch * seq, 0);
  out.positions.assign(batch * seq, 0);
  out.lengths.assign(batch, 0);
  return out;
}

}  // namespace

Batcher::Batcher(std::size_t examples, std::size_t batch_size, std::uint64_t seed,
                 bool shuffle)
    : examples_(examples), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (examples == 0) throw ConfigError("cannot batch an empty dataset");
}

std::size_t Batcher::batches_per_epoch() const {
  return (examples_ + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> Batcher::epoch(std::size_t index) const {
  std::vector<std::size_t> order(examples_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_) {
    std::mt19937_64 rng(seed_ + 0x632be59bd9b4e019ULL * (index + 1));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < examples_; s += batch_size_) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(examples_, s + batch_size_)));
  }
  return out;
}

TokenBatch collate_sequences(std::span<const ItemSequence> sequences,
                             std::span<const std::size_t> indices,
                             const ModelConfig& config) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  std::size_t seq = 0;
  for (auto i : indices) seq = std::max(seq, sequences[i].size());
  auto out = empty_batch(indices.size(), seq, config.fields.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = sequences[indices[b]];
    out.lengths[b] = s.size();
    for (std::size_t f = 0; f < config.fields.size(); ++f) {
      const auto& ids = field_ids(s, config.fields[f].name);
      std::copy(ids.begin(), ids.end(), out.ids[f].begin() + static_cast<std::ptrdiff_t>(b * seq));
    }
    for (std::size_t t = 0; t < s.size(); ++t) {
      out.positions[b * seq + t] = static_cast<std::int32_t>(t);
    }
  }
  return out;
}

ExampleBatch collate_examples(std::span<const DiscriminativeExample> examples,
                              std::span<const std::size_t> indices,
                              const ModelConfig& config) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  std::size_t seq = 0;
  for (auto i : indices) seq = std::max(seq, examples[i].behavior.size() + 1);
  ExampleBatch out;
  out.tokens = empty_batch(indices.size(), seq, config.fields.size());
  out.tokens.has_candidate = true;
  out.labels.resize(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& e = examples[indices[b]];
    const std::size_t n = e.behavior.size();
    out.tokens.lengths[b] = n + 1;
    out.labels[b] = e.label;
    for (std::size_t f = 0; f < config.fields.size(); ++f) {
      const auto& name = config.fields[f].name;
      const auto& ids = field_ids(e.behavior, name);
      auto dst = out.tokens.ids[f].begin() + static_cast<std::ptrdiff_t>(b * seq);
      std::copy(ids.begin(), ids.end(), dst);
      dst[static_cast<std::ptrdiff_t>(n)] = candidate_id(e, name);
    }
    for (std::size_t t = 0; t <= n; ++t) {
      out.tokens.positions[b * seq + t] = static_cast<std::int32_t>(t);
    }
    out.tokens.segments[b * seq + n] = 1;
  }
  return out;
}

}  // namespace gpsd
