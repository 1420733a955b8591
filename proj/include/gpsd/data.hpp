// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Interaction logs, sequence/example construction, temporal splitting and
// padded batching. Ids 0 and 1 are reserved (padding, mask); real item and
// category ids start at 2, so a vocabulary of n real ids has size n + 2.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpsd/model.hpp"

namespace gpsd {

struct Interaction {
  std::int64_t user = 0;
  std::int64_t timestamp = 0;  // seconds
  std::int32_t item = kFirstRealId;
  std::int32_t category = kFirstRealId;
  int label = 0;
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct InteractionLog {
  std::vector<Interaction> rows;
  std::size_t item_vocab = 0;      // including reserved ids
  std::size_t category_vocab = 0;  // including reserved ids
  std::vector<std::int32_t> item_category;  // indexed by item id; kPadId if unknown

  std::int32_t category_of(std::int32_t item) const;
  void validate() const;  // ids inside vocabularies, timestamps >= 0
};

struct SyntheticConfig {
  std::size_t users = 1000;
  std::size_t items = 1000;       // real items
  std::size_t categories = 20;    // real categories
  std::size_t latent_dim = 16;
  double zipf = 1.1;              // exposure exponent over a random item order
  std::size_t events = 100000;
  double positive_rate = 0.1;     // calibrated mean click probability
  double signal = 1.5;            // std of the user-item affinity logit
  double days = 10;               // time span covered by the events
  std::uint64_t seed = 1;
};

// Latent user/item vectors ~ N(0, 1/sqrt(k)); items exposed by Zipf rank;
// label ~ Bernoulli(sigmoid(signal*sqrt(k)*u.i + bias)) with bias solved so
// the mean click probability matches positive_rate. Each item's category
// is the nearest of `categories` random directions in latent space.
InteractionLog generate_synthetic(const SyntheticConfig& config);

// Tab-separated `user timestamp item category label` with header line.
void write_log_tsv(const InteractionLog& log, const std::filesystem::path& path);
InteractionLog read_log_tsv(const std::filesystem::path& path);

struct ItemSequence {
  std::int64_t user = 0;
  std::vector<std::int32_t> items;
  std::vector<std::int32_t> categories;
  std::vector<std::int64_t> timestamps;

  std::size_t size() const { return items.size(); }
};

struct SequenceOptions {
  std::size_t min_len = 50;
  std::size_t max_len = 100;
  std::optional<std::int64_t> before;  // only clicks strictly earlier
  bool drop_last_click = false;        // hold out each user's final click
};

// Per user, clicks in time order cut greedily into windows of max_len; a
// trailing remainder is kept when it has at least min_len clicks.
std::vector<ItemSequence> build_pretrain_sequences(const InteractionLog& log,
                                                   const SequenceOptions& opts);

struct DiscriminativeExample {
  std::int64_t user = 0;
  std::int64_t timestamp = 0;
  ItemSequence behavior;
  std::int32_t item = kFirstRealId;
  std::int32_t category = kFirstRealId;
  float label = 0;
};

enum class ExampleMode { kLogged, kTaobao };

ExampleMode parse_example_mode(std::string_view text);

struct ExampleOptions {
  std::size_t min_len = 10;
  std::size_t max_len = 100;
  ExampleMode mode = ExampleMode::kLogged;
  std::uint64_t seed = 1;
  std::size_t last_rows = 0;  // logged mode: only the last N log rows (0 = all)
};

struct ExampleSet {
  std::vector<DiscriminativeExample> examples;
  std::size_t skipped = 0;  // rows/users with too short a history
};

// Logged: each row becomes an example whose behavior is the user's clicks
// strictly before the row's timestamp (most recent max_len). Taobao-style:
// behavior = first T-1 clicks, positive = T-th click, plus one uniformly
// sampled negative candidate per positive.
ExampleSet build_discriminative_examples(const InteractionLog& log,
                                         const ExampleOptions& opts);

struct DataSplit {
  std::vector<DiscriminativeExample> train;
  std::vector<DiscriminativeExample> valid;
  std::vector<DiscriminativeExample> test;
  std::int64_t window_start = 0;  // first timestamp of the held-out window
};

// Examples newer than (latest timestamp - window) are held out and divided
// 50/50 between validation and test by a hash of the user id.
DataSplit temporal_split(std::vector<DiscriminativeExample> examples,
                         std::int64_t window);

std::uint64_t user_hash(std::int64_t user);

// Deterministic per-epoch shuffling into index batches.
class Batcher {
 public:
  Batcher(std::size_t examples, std::size_t batch_size, std::uint64_t seed,
          bool shuffle = true);

  std::size_t batches_per_epoch() const;
  std::vector<std::vector<std::size_t>> epoch(std::size_t index) const;

 private:
  std::size_t examples_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

// Right-padded behavior-only batch (pretraining).
TokenBatch collate_sequences(std::span<const ItemSequence> sequences,
                             std::span<const std::size_t> indices,
                             const ModelConfig& config);

struct ExampleBatch {
  TokenBatch tokens;  // behavior followed by the candidate token
  std::vector<float> labels;
};

ExampleBatch collate_examples(std::span<const DiscriminativeExample> examples,
                              std::span<const std::size_t> indices,
                              const ModelConfig& config);

}  // namespace gpsd
