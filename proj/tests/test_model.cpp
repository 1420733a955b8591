// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "gpsd/analysis.hpp"
#include "gpsd/model.hpp"
#include "gpsd/objectives.hpp"
#include "test_support.hpp"

namespace gpsd {
namespace {

using testing::normals;
using testing::random_batch;
using testing::tiny_config;

// Re-draws every parameter with a larger scale so finite differences see
// gradients well above the error floor.
void scramble(Transformer<double>& model, std::uint64_t seed, double stddev = 0.5) {
  std::mt19937_64 rng(seed);
  for (auto& p : model.params().params()) p.value = normals(p.size(), rng, stddev);
}

std::vector<double> rows_of(const Tensor<double>& t, std::size_t first, std::size_t count) {
  const std::size_t d = t.shape()[1];
  return {t.value().begin() + static_cast<std::ptrdiff_t>(first * d),
          t.value().begin() + static_cast<std::ptrdiff_t>((first + count) * d)};
}

TEST_CASE("model codes parse") {
  auto c = parse_model_code("L4H256A4");
  CHECK(c.layers == 4);
  CHECK(c.hidden == 256);
  CHECK(c.heads == 4);
  CHECK(c.str() == "L4H256A4");
  CHECK_THROWS_AS(parse_model_code("LxH1A"), ConfigError);
  CHECK_THROWS_AS(parse_model_code("L4H256"), ConfigError);
  CHECK_THROWS_AS(parse_model_code("L4H30A4"), ConfigError);  // odd head dim
}

TEST_CASE("partition tags cover every parameter and match the analytic count") {
  for (auto code : {"L1H8A2", "L2H16A2", "L2H32A4", "L4H32A4"}) {
    auto config = ModelConfig::from_code(code, {{"item", 50}, {"category", 7}});
    config.extra_features = 3;
    Transformer<float> model(config, 1);
    std::size_t dense = 0, sparse = 0;
    for (const auto& p : model.params().params()) {
      (p.partition == Partition::kDense ? dense : sparse) += p.size();
    }
    CHECK(dense == count_dense_params(config));
    CHECK(sparse == count_sparse_params(config));
    auto names = model.params().names(Partition::kDense);
    for (auto& n : model.params().names(Partition::kSparse)) names.push_back(n);
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
    CHECK(names.size() == model.params().params().size());
    CHECK(model.params().names(Partition::kSparse) ==
          std::vector<std::string>{"emb.item", "emb.category"});
  }
}

TEST_CASE("same seed gives identical parameters") {
  auto config = tiny_config("L2H16A2", 40);
  Transformer<float> a(config, 5), b(config, 5), c(config, 6);
  bool all_equal = true, any_differs = false;
  for (std::size_t i = 0; i < a.params().params().size(); ++i) {
    all_equal = all_equal && a.params().params()[i].value == b.params().params()[i].value;
    any_differs = any_differs || a.params().params()[i].value != c.params().params()[i].value;
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("causal encoding ignores later positions") {
  std::mt19937_64 rng(21);
  auto config = tiny_config("L2H16A2", 30, Direction::kCausal);
  Transformer<double> model(config, 3);
  scramble(model, 4);
  auto full = random_batch(config, {9}, rng);
  Graph<double> g;
  auto h_full = model.encode(g, full);
  for (std::size_t t = 0; t < 9; ++t) {
    auto prefix = full;
    prefix.seq = t + 1;
    prefix.lengths = {t + 1};
    prefix.ids[0].resize(t + 1);
    prefix.segments.resize(t + 1);
    prefix.positions.resize(t + 1);
    auto h_prefix = model.encode(g, prefix);
    CHECK(rows_of(h_prefix, 0, t + 1) == rows_of(h_full, 0, t + 1));

    // Changing any later token leaves rows 0..t untouched.
    auto changed = full;
    for (std::size_t u = t + 1; u < 9; ++u) changed.ids[0][u] = 2 + (changed.ids[0][u] + 5) % 28;
    auto h_changed = model.encode(g, changed);
    CHECK(rows_of(h_changed, 0, t + 1) == rows_of(h_full, 0, t + 1));
  }
}

TEST_CASE("bidirectional encoding sees later positions") {
  std::mt19937_64 rng(22);
  auto config = tiny_config("L1H8A2", 20, Direction::kBidirectional);
  Transformer<double> model(config, 3);
  scramble(model, 5);
  auto b = random_batch(config, {2}, rng);
  Graph<double> g;
  auto h1 = model.encode(g, b);
  b.ids[0][1] = b.ids[0][1] == 2 ? 3 : 2;
  auto h2 = model.encode(g, b);
  CHECK(rows_of(h1, 0, 1) != rows_of(h2, 0, 1));
}

TEST_CASE("a zero segment table reproduces the unmarked encoding") {
  std::mt19937_64 rng(23);
  auto config = tiny_config("L1H8A2", 20);
  Transformer<double> model(config, 3);
  scramble(model, 6);
  auto& seg = model.params().at("seg").value;
  std::fill(seg.begin(), seg.end(), 0.0);
  auto b = random_batch(config, {5, 3}, rng, true);
  Graph<double> g;
  auto marked = model.encode(g, b, true);
  auto unmarked = model.encode(g, b, false);
  CHECK(rows_of(marked, 0, b.rows()) == rows_of(unmarked, 0, b.rows()));
}

TEST_CASE("generative logits are dot products with the tied item table") {
  std::mt19937_64 rng(24);
  auto config = tiny_config("L1H8A2", 25);
  Transformer<double> model(config, 3);
  scramble(model, 7);
  Graph<double> g;
  std::vector<std::int32_t> all(25);
  std::iota(all.begin(), all.end(), 0);

  auto zero = model.generative_logits(g, g.constant({2, 8}, std::vector<double>(16, 0.0)), all);
  for (auto v : zero.value()) CHECK(v == 0.0);

  auto hv = normals(3 * 8, rng);
  auto logits = model.generative_logits(g, g.constant({3, 8}, hv), all);
  const auto& table = model.params().at("emb.item").value;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t j = 0; j < 25; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < 8; ++k) dot += hv[r * 8 + k] * table[j * 8 + k];
      CHECK(std::abs(logits.value()[r * 25 + j] - dot) <= 1e-6);
    }
  }

  const std::vector<std::int32_t> twins = {9, 9};
  auto same = model.generative_logits(g, g.constant({1, 8}, normals(8, rng)), twins);
  CHECK(same.value()[0] == same.value()[1]);
}

TEST_CASE("input and output embeddings share storage") {
  auto config = tiny_config("L1H8A2", 10);
  Transformer<double> model(config, 3);
  auto& table = model.params().at("emb.item").value;
  for (std::size_t k = 0; k < 8; ++k) table[4 * 8 + k] = static_cast<double>(k);
  Graph<double> g;
  const std::vector<std::int32_t> ids = {4};
  auto h = g.constant({1, 8}, std::vector<double>(8, 1.0));
  CHECK(model.generative_logits(g, h, ids).item() == 28.0);
  // The same row is what the encoder gathers for token 4.
  auto in = gather(model.bind(g, "emb.item"), ids);
  CHECK(in.value()[7] == 7.0);
}

TEST_CASE("discriminative head outputs probabilities") {
  std::mt19937_64 rng(25);
  auto config = tiny_config("L1H8A2", 10);
  Transformer<double> model(config, 3);
  for (auto& p : model.params().params()) {
    if (p.name.starts_with("head.")) std::fill(p.value.begin(), p.value.end(), 0.0);
  }
  Graph<double> g;
  auto half = model.discriminative_head(g, g.constant({4, 8}, normals(32, rng)));
  for (auto v : half.value()) CHECK(v == 0.5);

  // 100 freshly initialized heads on 100 unit-scale states each.
  std::size_t inside = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Transformer<float> fresh(config, seed);
    Graph<float> gf;
    std::normal_distribution<float> unit;
    std::vector<float> states(100 * 8);
    for (auto& x : states) x = unit(rng);
    auto probs = fresh.discriminative_head(gf, gf.constant({100, 8}, states));
    for (auto p : probs.value()) inside += (p > 0.0f && p < 1.0f) ? 1 : 0;
  }
  CHECK(inside == 10000);
}

TEST_CASE("head with extra features checks the width") {
  std::mt19937_64 rng(26);
  auto config = tiny_config("L1H8A2", 10);
  config.extra_features = 3;
  Transformer<double> model(config, 3);
  Graph<double> g;
  auto state = g.constant({2, 8}, normals(16, rng));
  auto extra = g.constant({2, 3}, normals(6, rng));
  CHECK(model.discriminative_head(g, state, &extra).shape() == Shape{2, 1});
  auto wrong = g.constant({2, 2}, normals(4, rng));
  CHECK_THROWS_AS(model.discriminative_head(g, state, &wrong), ShapeError);
  CHECK_THROWS_AS(model.discriminative_head(g, state), ShapeError);
}

TEST_CASE("batch validation") {
  std::mt19937_64 rng(27);
  auto config = tiny_config("L1H8A2", 10, Direction::kCausal, 4);
  Transformer<double> model(config, 3);
  Graph<double> g;
  auto b = random_batch(config, {3}, rng);
  b.ids[0][0] = 10;
  CHECK_THROWS_AS(model.encode(g, b), std::out_of_range);
  auto too_long = random_batch(config, {5}, rng);
  CHECK_THROWS_AS(model.encode(g, too_long), std::length_error);
  // A candidate token may extend the limit by one.
  auto with_candidate = random_batch(config, {5}, rng, true);
  CHECK_NOTHROW(model.encode(g, with_candidate));
}

TEST_CASE("head gradient matches finite differences") {
  std::mt19937_64 rng(28);
  auto config = tiny_config("L1H8A2", 10);
  config.extra_features = 2;
  Transformer<double> model(config, 3);
  scramble(model, 9);
  auto state = normals(3 * 8, rng), extra = normals(3 * 2, rng);
  auto r = testing::check_gradients(model.params(), [&](Graph<double>& g, auto&) {
    auto s = g.constant({3, 8}, state);
    auto e = g.constant({3, 2}, extra);
    return testing::weighted_sum(model.discriminative_head(g, s, &e), 17);
  });
  CHECK(r.max_error <= 1e-4);
}

TEST_CASE("full model gradients match finite differences") {
  std::mt19937_64 rng(29);
  for (auto direction : {Direction::kCausal, Direction::kBidirectional}) {
    auto config = ModelConfig::from_code("L2H8A2", {{"item", 9}, {"category", 4}});
    config.direction = direction;
    config.max_seq_len = 6;
    config.ffn_dim = 8;
    config.head_hidden = {4};
    Transformer<double> model(config, 3);
    scramble(model, 10);
    auto b = random_batch(config, {4, 2, 3}, rng, true);
    const std::vector<float> labels = {1, 0, 1};
    auto r = testing::check_gradients(model.params(), [&](Graph<double>& g, auto&) {
      return discriminative_loss(model, g, b, labels).loss;
    });
    CHECK(r.max_error <= 1e-4);

    auto seqs = random_batch(config, {5, 3}, rng);
    std::mt19937_64 neg_rng(30);
    auto negs = draw_negatives(model, seqs, NegativeConfig{4, true}, neg_rng, true);
    auto r2 = testing::check_gradients(model.params(), [&](Graph<double>& g, auto&) {
      return generative_sequence_loss(model, g, seqs, negs, true).loss;
    });
    CHECK(r2.max_error <= 1e-4);
  }
}

}  // namespace
}  // namespace gpsd
