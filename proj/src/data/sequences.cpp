// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "gpsd/data.hpp"

namespace gpsd {

namespace {

// Row indices per user in (timestamp, original order) order.
std::map<std::int64_t, std::vector<std::size_t>> rows_by_user(const InteractionLog& log,
                                                              bool clicks_only) {
  std::vector<std::size_t> order(log.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return log.rows[a].timestamp < log.rows[b].timestamp;
  });
  std::map<std::int64_t, std::vector<std::size_t>> out;
  for (auto i : order) {
    if (clicks_only && log.rows[i].label != 1) continue;
    out[log.rows[i].user].push_back(i);
  }
  return out;
}

void append(ItemSequence& seq, const Interaction& r) {
  seq.items.push_back(r.item);
  seq.categories.push_back(r.category);
  seq.timestamps.push_back(r.timestamp);
}

}  // namespace

std::vector<ItemSequence> build_pretrain_sequences(const InteractionLog& log,
                                                   const SequenceOptions& opts) {
  if (opts.min_len < 1 || opts.min_len > opts.max_len) {
    throw ConfigError("sequence lengths require 1 <= min_len <= max_len");
  }
  std::vector<ItemSequence> out;
  for (auto& [user, rows] : rows_by_user(log, true)) {
    std::vector<std::size_t> kept;
    for (auto i : rows) {
      if (opts.before && log.rows[i].timestamp >= *opts.before) continue;
      kept.push_back(i);
    }
    if (opts.drop_last_click && !kept.empty()) kept.pop_back();
    for (std::size_t start = 0; start < kept.size(); start += opts.max_len) {
      const std::size_t end = std::min(kept.size(), start + opts.max_len);
      if (end - start < opts.min_len) break;
      ItemSequence seq;
      seq.user = user;
      for (std::size_t j = start; j < end; ++j) append(seq, log.rows[kept[j]]);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

ExampleMode parse_example_mode(std::string_view text) {
  if (text == "logged") return ExampleMode::kLogged;
  if (text == "taobao") return ExampleMode::kTaobao;
  throw ConfigError("unknown example mode '" + std::string(text) +
                    "' (expected logged or taobao)");
}

ExampleSet build_discriminative_examples(const InteractionLog& log,
                                         const ExampleOptions& opts) {
  if (opts.min_len < 1 || opts.min_len > opts.max_len) {
    throw ConfigError("behavior lengths require 1 <= min_len <= max_len");
  }
  ExampleSet out;
  if (opts.mode == ExampleMode::kTaobao) {
    if (log.item_vocab < kFirstRealId + 2) {
      throw ConfigError("negative sampling needs at least two real items");
    }
    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::int32_t> pick(
        kFirstRealId, static_cast<std::int32_t>(log.item_vocab) - 1);
    for (auto& [user, rows] : rows_by_user(log, true)) {
      const Interaction& last = log.rows[rows.back()];
      // Clicks sharing the positive's timestamp are not strictly earlier.
      std::size_t end = rows.size() - 1;
      while (end > 0 && log.rows[rows[end - 1]].timestamp >= last.timestamp) --end;
      if (end < opts.min_len) {
        ++out.skipped;
        continue;
      }
      DiscriminativeExample pos;
      pos.user = user;
      pos.timestamp = last.timestamp;
      pos.behavior.user = user;
      const std::size_t begin = end > opts.max_len ? end - opts.max_len : 0;
      for (std::size_t j = begin; j < end; ++j) append(pos.behavior, log.rows[rows[j]]);
      pos.item = last.item;
      pos.category = last.category;
      pos.label = 1;
      DiscriminativeExample neg = pos;
      do {
        neg.item = pick(rng);
      } while (neg.item == pos.item);
      neg.category = log.category_of(neg.item);
      neg.label = 0;
      out.examples.push_back(std::move(pos));
      out.examples.push_back(std::move(neg));
    }
    return out;
  }

  std::vector<std::size_t> order(log.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return log.rows[a].timestamp < log.rows[b].timestamp;
  });
  const std::size_t first =
      opts.last_rows == 0 || opts.last_rows >= order.size() ? 0 : order.size() - opts.last_rows;
  std::map<std::int64_t, std::vector<std::size_t>> history;
  for (std::size_t o = 0; o < order.size(); ++o) {
    const Interaction& row = log.rows[order[o]];
    auto& clicks = history[row.user];
    if (o >= first) {
      // Clicks sharing the row's timestamp are not strictly earlier.
      std::size_t end = clicks.size();
      while (end > 0 && log.rows[clicks[end - 1]].timestamp >= row.timestamp) --end;
      if (end < opts.min_len) {
        ++out.skipped;
      } else {
        DiscriminativeExample ex;
        ex.user = row.user;
        ex.timestamp = row.timestamp;
        ex.behavior.user = row.user;
        const std::size_t begin = end > opts.max_len ? end - opts.max_len : 0;
        for (std::size_t j = begin; j < end; ++j) append(ex.behavior, log.rows[clicks[j]]);
        ex.item = row.item;
        ex.category = row.category;
        ex.label = static_cast<float>(row.label);
        out.examples.push_back(std::move(ex));
      }
    }
    if (row.label == 1) clicks.push_back(order[o]);
  }
  return out;
}

std::uint64_t user_hash(std::int64_t user) {
  // splitmix64 finalizer
  std::uint64_t z = static_cast<std::uint64_t>(user) + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

DataSplit temporal_split(std::vector<DiscriminativeExample> examples,
                         std::int64_t window) {
  if (window <= 0) throw ConfigError("evaluation window must be > 0");
  if (examples.empty()) throw ConfigError("no examples to split");
  std::int64_t latest = examples.front().timestamp;
  for (const auto& e : examples) latest = std::max(latest, e.timestamp);
  DataSplit out;
  out.window_start = latest - window + 1;
  for (auto& e : examples) {
    if (e.timestamp < out.window_start) {
      out.train.push_back(std::move(e));
    } else if (user_hash(e.user) % 2 == 0) {
      out.valid.push_back(std::move(e));
    } else {
      out.test.push_back(std::move(e));
    }
  }
  if (out.train.empty() || out.valid.empty() || out.test.empty()) {
    throw ConfigError("temporal split left an empty split (train " +
                      std::to_string(out.train.size()) + ", valid " +
                      std::to_string(out.valid.size()) + ", test " +
                      std::to_string(out.test.size()) + ")");
  }
  return out;
}

}  // namespace gpsd
