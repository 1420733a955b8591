// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <boost/crc.hpp>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <vector>

#include "doctest.h"
#include "gpsd/analysis.hpp"
#include "gpsd/objectives.hpp"
#include "gpsd/optim.hpp"
#include "gpsd/transfer.hpp"
#include "test_support.hpp"

namespace gpsd {
namespace {

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

// Rewrites the trailing checksum after a deliberate edit.
void reseal(std::vector<std::uint8_t>& bytes) {
  const auto crc = crc32_of(bytes.data(), bytes.size() - 4);
  for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + i] = static_cast<std::uint8_t>(crc >> (8 * i));
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

ModelConfig two_field_config(std::string_view code, std::size_t items = 40,
                             std::size_t categories = 6) {
  auto c = ModelConfig::from_code(code, {{"item", items}, {"category", categories}});
  c.max_seq_len = 12;
  return c;
}

template <typename Real>
bool same_values(const Transformer<Real>& a, const Transformer<Real>& b, std::string_view name) {
  return a.params().at(name).value == b.params().at(name).value;
}

TEST_CASE("checkpoint bytes round trip exactly") {
  Transformer<float> model(two_field_config("L2H16A2"), 7);
  auto ckpt = Checkpoint::from_model(model);
  auto bytes = ckpt.encode();
  auto back = Checkpoint::decode(bytes);
  CHECK(back.encode() == bytes);
  CHECK(back.config.code() == model.config().code());
  CHECK(back.config.fields == model.config().fields);

  Transformer<float> fresh(two_field_config("L2H16A2"), 99);
  for (auto& p : fresh.params().params()) load_parameter(back.at(p.name), p);
  for (const auto& p : model.params().params()) CHECK(same_values(model, fresh, p.name));

  auto dir = testing::scratch_dir("ckpt");
  save_checkpoint(model, dir / "a.ckpt");
  auto loaded = load_checkpoint(dir / "a.ckpt");
  CHECK(loaded.encode() == bytes);
  save_checkpoint(loaded, dir / "b.ckpt");
  std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
  std::vector<char> ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ba == bb);
}

TEST_CASE("checkpoint layout is little-endian with a trailing CRC-32") {
  Transformer<double> model(two_field_config("L1H8A2", 10, 4), 3);
  auto bytes = Checkpoint::from_model(model).encode();
  CHECK(std::memcmp(bytes.data(), "GPSD", 4) == 0);
  CHECK(read_u32(bytes, 4) == kCheckpointVersion);
  CHECK(read_u32(bytes, 8) == model.params().params().size() + 1);
  CHECK(read_u32(bytes, bytes.size() - 4) == crc32_of(bytes.data(), bytes.size() - 4));

  // Walk the records by hand.
  std::size_t at = 12;
  std::vector<std::string> names;
  for (std::uint32_t r = 0; r < read_u32(bytes, 8); ++r) {
    const std::size_t len = bytes[at] | (bytes[at + 1] << 8);
    names.emplace_back(reinterpret_cast<const char*>(&bytes[at + 2]), len);
    at += 2 + len;
    const auto partition = bytes[at], dtype = bytes[at + 1], rank = bytes[at + 2];
    at += 3;
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d, at += 4) n *= read_u32(bytes, at);
    const std::size_t width = dtype == 0 ? 4 : dtype == 1 ? 8 : 1;
    if (r == 0) {
      CHECK(names[0] == "meta.config");
      CHECK(partition == kMetaPartition);
    } else {
      const auto& p = model.params().at(names.back());
      CHECK(partition == static_cast<std::uint8_t>(p.partition));
      CHECK(dtype == 1);
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
      double first;
      std::memcpy(&first, &bits, 8);
      CHECK(first == p.value[0]);
    }
    at += n * width;
  }
  CHECK(at == bytes.size() - 4);
  CHECK(names[1] == "emb.item");
}

TEST_CASE("corrupted checkpoints are rejected") {
  Transformer<float> model(two_field_config("L1H8A2"), 3);
  const auto good = Checkpoint::from_model(model).encode();
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    auto bad = good;
    bad[testing::uniform_size(rng, 12, bad.size() - 5)] ^= 0x10;
    CHECK_THROWS_WITH_AS(Checkpoint::decode(bad), doctest::Contains("checksum"), CheckpointError);
  }
  auto truncated = std::vector<std::uint8_t>(good.begin(), good.end() - 100);
  CHECK_THROWS_AS(Checkpoint::decode(truncated), CheckpointError);
  reseal(truncated);
  CHECK_THROWS_AS(Checkpoint::decode(truncated), CheckpointError);

  auto magic = good;
  magic[0] = 'X';
  reseal(magic);
  CHECK_THROWS_AS(Checkpoint::decode(magic), CheckpointError);

  auto version = good;
  version[4] = 9;
  reseal(version);
  CHECK_THROWS_WITH_AS(Checkpoint::decode(version), doctest::Contains("version"), CheckpointError);

  auto trailing = good;
  trailing.insert(trailing.end() - 4, 0);
  reseal(trailing);
  CHECK_THROWS_AS(Checkpoint::decode(trailing), CheckpointError);

  CHECK_THROWS_AS(Checkpoint::decode(std::vector<std::uint8_t>(8, 0)), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
}

TEST_CASE("checkpoint dense count equals the analytic count") {
  auto config = two_field_config("L4H32A4", 100, 10);
  Transformer<float> model(config, 1);
  auto ckpt = Checkpoint::from_model(model);
  CHECK(ckpt.element_count(Partition::kDense) == count_dense_params(config));
  CHECK(ckpt.element_count(Partition::kSparse) == count_sparse_params(config));
  CHECK(ckpt.sparse_tables() == model.sparse_tables());
}

TEST_CASE("records convert between precisions") {
  Transformer<double> wide(two_field_config("L1H8A2"), 2);
  auto ckpt = Checkpoint::from_model(wide);
  Transformer<float> narrow(two_field_config("L1H8A2"), 5);
  auto& p = narrow.params().at("layer0.wq");
  load_parameter(ckpt.at("layer0.wq"), p);
  const auto& src = wide.params().at("layer0.wq").value;
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.value[i] == static_cast<float>(src[i]));
  CHECK_THROWS_AS(load_parameter(ckpt.at("layer0.w_up"), p), TransferError);
}

TEST_CASE("strategy names and predicate table") {
  const std::map<Strategy, StrategyTraits> expected = {
      {Strategy::kNT, {false, false, false}},
      {Strategy::kFT, {true, true, false}},
      {Strategy::kST, {true, false, false}},
      {Strategy::kFTSF, {true, true, true}},
      {Strategy::kSTSF, {true, false, true}},
  };
  for (auto s : kAllStrategies) {
    CHECK(traits(s) == expected.at(s));
    CHECK(parse_strategy(strategy_name(s)) == s);
  }
  CHECK(parse_strategy("ST&SF") == Strategy::kSTSF);
  CHECK(parse_strategy("ft_sf") == Strategy::kFTSF);
  CHECK(parse_strategy("NT") == Strategy::kNT);
  CHECK_THROWS(parse_strategy("xt"));
}

TEST_CASE("apply_strategy copies and freezes per the table") {
  const auto config = two_field_config("L2H16A2");
  Transformer<float> source(config, 11);
  const auto ckpt = Checkpoint::from_model(source);
  for (auto s : kAllStrategies) {
    CAPTURE(strategy_name(s));
    Transformer<float> target(config, 12);
    auto report = apply_strategy(s, s == Strategy::kNT ? nullptr : &ckpt, target);
    const auto t = traits(s);
    bool dense_all_equal = true;
    for (const auto& p : target.params().params()) {
      const bool equal = same_values(source, target, p.name);
      if (p.partition == Partition::kSparse) {
        CHECK(equal == t.sparse_copied);
      } else {
        dense_all_equal = dense_all_equal && equal;
        if (t.dense_copied) CHECK(equal);
      }
    }
    if (!t.dense_copied) CHECK_FALSE(dense_all_equal);
    auto frozen = target.params().frozen();
    std::sort(frozen.begin(), frozen.end());
    if (t.sparse_frozen) {
      auto sparse = target.params().names(Partition::kSparse);
      std::sort(sparse.begin(), sparse.end());
      CHECK(frozen == sparse);
    } else {
      CHECK(frozen.empty());
    }
    CHECK(report.transferred.size() == (t.sparse_copied ? 2u : 0u));
  }
}

TEST_CASE("strategy prerequisites") {
  Transformer<float> source(two_field_config("L2H16A2"), 1);
  const auto ckpt = Checkpoint::from_model(source);
  Transformer<float> target(two_field_config("L2H16A2"), 2);
  CHECK_THROWS_WITH_AS(apply_strategy(Strategy::kNT, &ckpt, target),
                       doctest::Contains("NT accepts no checkpoint"), TransferError);
  CHECK_THROWS_AS(apply_strategy(Strategy::kST, nullptr, target), TransferError);

  Transformer<float> deeper(two_field_config("L4H16A2"), 2);
  CHECK_THROWS_AS(apply_strategy(Strategy::kFT, &ckpt, deeper), TransferError);
  CHECK_NOTHROW(apply_strategy(Strategy::kST, &ckpt, deeper));
}

TEST_CASE("sparse transfer needs the same table keys") {
  auto pre = two_field_config("L4H64A4", 30, 5);
  Transformer<float> source(pre, 1);
  const auto ckpt = Checkpoint::from_model(source);

  Transformer<float> wider_heads(two_field_config("L8H64A8", 30, 5), 2);
  CHECK_NOTHROW(apply_strategy(Strategy::kSTSF, &ckpt, wider_heads));
  CHECK(same_values(source, wider_heads, "emb.item"));

  Transformer<float> wider(two_field_config("L4H128A4", 30, 5), 2);
  CHECK_THROWS_WITH_AS(apply_strategy(Strategy::kST, &ckpt, wider),
                       doctest::Contains("sparse key mismatch"), TransferError);
  CHECK_THROWS_AS(check_strategy(Strategy::kST, &ckpt, wider.config()), TransferError);
}

TEST_CASE("FT&SF keeps sparse tensors bitwise fixed through training") {
  const auto config = two_field_config("L1H8A2", 30, 5);
  Transformer<float> source(config, 1);
  const auto ckpt = Checkpoint::from_model(source);
  Transformer<float> target(config, 2);
  apply_strategy(Strategy::kFTSF, &ckpt, target);
  const auto initial = Checkpoint::from_model(target);

  std::mt19937_64 rng(72);
  AdamW<float> opt;
  for (int step = 0; step < 120; ++step) {
    auto b = testing::random_batch(config, {5, 3, 7, 2}, rng, true);
    std::vector<float> labels = {1, 0, 1, 0};
    target.params().zero_grad();
    Graph<float> g;
    auto out = discriminative_loss(target, g, b, labels);
    g.backward(out.loss);
    clip_global_norm(target.params(), 1.0);
    opt.step(target.params(), 1e-3);
  }
  std::size_t changed = 0;
  for (const auto& p : target.params().params()) {
    const bool equal = p.value == source.params().at(p.name).value;
    if (p.partition == Partition::kSparse) {
      CHECK(equal);
      CHECK(Checkpoint::from_model(target).at(p.name).payload == ckpt.at(p.name).payload);
    } else if (!equal) {
      ++changed;
    }
  }
  CHECK(changed >= 1);
  CHECK(initial.at("layer0.wq").payload != Checkpoint::from_model(target).at("layer0.wq").payload);
}

// Minimal foreign architecture: only id-keyed tables, no Transformer.
class ForeignModel : public SparseRegistry {
 public:
  explicit ForeignModel(std::vector<SparseTableInfo> tables) : tables_(std::move(tables)) {
    for (const auto& t : tables_) rows_[t.field].assign(t.vocab * t.dim, -1.0);
  }
  std::vector<SparseTableInfo> sparse_tables() const override { return tables_; }
  void load_sparse_table(const std::string& field, std::span<const double> rows) override {
    rows_.at(field).assign(rows.begin(), rows.end());
  }
  void freeze_sparse_table(const std::string& field) override { frozen_.push_back(field); }

  std::map<std::string, std::vector<double>> rows_;
  std::vector<std::string> frozen_;

 private:
  std::vector<SparseTableInfo> tables_;
};

TEST_CASE("cross-architecture transfer through the sparse registry") {
  Transformer<double> source(two_field_config("L1H8A2", 30, 5), 1);
  const auto ckpt = Checkpoint::from_model(source);

  ForeignModel same({{"item", 30, 8}, {"category", 5, 8}});
  auto report = cross_architecture_transfer(ckpt, same, {false, true});
  CHECK(same.rows_.at("item") == source.params().at("emb.item").value);
  CHECK(same.rows_.at("category") == source.params().at("emb.category").value);
  CHECK(same.frozen_.size() == 2);
  CHECK(report.transferred.size() == 2);

  ForeignModel narrow({{"item", 30, 16}, {"category", 5, 16}});
  CHECK_THROWS_AS(cross_architecture_transfer(ckpt, narrow), TransferError);

  ForeignModel partial({{"item", 30, 8}, {"brand", 9, 8}});
  CHECK_THROWS_AS(cross_architecture_transfer(ckpt, partial), TransferError);
  auto lenient = cross_architecture_transfer(ckpt, partial, {true, false});
  CHECK(lenient.transferred == std::vector<std::string>{"item"});
  CHECK(lenient.missing_in_target == std::vector<std::string>{"category"});
  CHECK(lenient.missing_in_checkpoint == std::vector<std::string>{"brand"});
  CHECK(partial.rows_.at("item") == source.params().at("emb.item").value);
  CHECK(partial.rows_.at("brand") == std::vector<double>(72, -1.0));
  CHECK(lenient.summary().find("item") != std::string::npos);

  ForeignModel disjoint({{"brand", 9, 8}});
  CHECK_THROWS_AS(cross_architecture_transfer(ckpt, disjoint, {true, false}), TransferError);
}

}  // namespace
}  // namespace gpsd
