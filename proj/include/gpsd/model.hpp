// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm Transformer shared by the generative and discriminative stages.
// Item/feature embedding tables form the sparse partition; everything else
// (attention, FFN, norms, segment embedding, MLP head) is dense.

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gpsd/ops.hpp"
#include "gpsd/sparse_registry.hpp"
#include "gpsd/tensor.hpp"

namespace gpsd {

// Reserved ids shared by every field.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kMaskId = 1;
inline constexpr std::int32_t kFirstRealId = 2;

inline constexpr std::string_view kItemField = "item";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Direction { kCausal, kBidirectional };

std::string_view direction_name(Direction d);
Direction parse_direction(std::string_view text);

struct ModelCode {
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::size_t heads = 0;

  std::string str() const;
  friend bool operator==(const ModelCode&, const ModelCode&) = default;
};

// Parses "L<u>H<v>A<w>", e.g. "L4H256A4".
ModelCode parse_model_code(std::string_view text);

struct FieldVocab {
  std::string name;
  std::size_t size = 0;
  friend bool operator==(const FieldVocab&, const FieldVocab&) = default;
};

// round(8v/3) rounded up to a multiple of 8.
std::size_t default_ffn_dim(std::size_t hidden);

struct ModelConfig {
  std::size_t layers = 1;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn_dim = 0;  // 0 selects default_ffn_dim(hidden)
  std::vector<FieldVocab> fields = {{std::string(kItemField), 16}};
  std::size_t max_seq_len = 128;
  Direction direction = Direction::kCausal;
  std::vector<std::size_t> head_hidden;  // empty selects {v, v/2}
  std::size_t extra_features = 0;
  std::size_t segments = 2;
  double norm_eps = 1e-6;
  double rope_base = 10000.0;

  static ModelConfig from_code(std::string_view code,
                               std::vector<FieldVocab> fields);

  ModelCode code() const { return {layers, hidden, heads}; }
  std::size_t resolved_ffn_dim() const;
  std::vector<std::size_t> resolved_head_hidden() const;
  std::size_t vocab(std::string_view field) const;
  void validate() const;  // throws ConfigError
};

// Token inputs for a padded batch; row b*seq+t is token t of sequence b.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::vector<std::int32_t>> ids;  // one array per config field
  std::vector<std::int32_t> segments;          // 0 behavior, 1 candidate
  std::vector<std::int32_t> positions;
  std::vector<std::size_t> lengths;
  bool has_candidate = false;

  std::size_t rows() const { return batch * seq; }
};

template <typename Real>
class Transformer final : public SparseRegistry {
 public:
  Transformer(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore<Real>& params() { return params_; }
  const ParameterStore<Real>& params() const { return params_; }

  // Binds a parameter as a graph leaf; frozen ones do not request grads.
  Tensor<Real> bind(Graph<Real>& g, std::string_view name);

  // Final-norm hidden states, [batch*seq, hidden]. When `use_segments` is
  // false the segment embedding is left out of the input sum.
  Tensor<Real> encode(Graph<Real>& g, const TokenBatch& batch,
                      bool use_segments = true);

  // Tied output projection: logits[r, j] = hidden[r] . item_table[ids[j]].
  Tensor<Real> generative_logits(Graph<Real>& g, const Tensor<Real>& hidden,
                                 std::span<const std::int32_t> ids);

  // MLP head on [n, hidden] states (plus optional [n, extra] features),
  // returning click probabilities [n, 1].
  Tensor<Real> discriminative_head(Graph<Real>& g, const Tensor<Real>& state,
                                   const Tensor<Real>* extra = nullptr);

  static std::string table_name(std::string_view field);

  // SparseRegistry
  std::vector<SparseTableInfo> sparse_tables() const override;
  void load_sparse_table(const std::string& field,
                         std::span<const double> rows) override;
  void freeze_sparse_table(const std::string& field) override;

 private:
  void validate_batch(const TokenBatch& batch) const;

  ModelConfig config_;
  ParameterStore<Real> params_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace gpsd
