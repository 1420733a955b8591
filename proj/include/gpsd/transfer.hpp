// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints and the sparse/dense transfer strategies.
//
// On-disk layout (all integers little-endian):
//   "GPSD" | u32 version | u32 record count |
//   records: u16 name length, name, u8 partition, u8 dtype, u8 rank,
//            u32 dims[rank], payload |
//   u32 CRC-32 of all preceding bytes.
// Partition tags: 0 sparse, 1 dense, 2 metadata. Dtype tags: 0 f32, 1 f64,
// 2 u8. The model configuration travels as a u8 metadata record named
// "meta.config" holding `key=value` lines.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gpsd/model.hpp"
#include "gpsd/sparse_registry.hpp"

namespace gpsd {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransferError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

inline constexpr std::uint8_t kMetaPartition = 2;
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  std::uint8_t partition = 1;
  DType dtype = DType::kF32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian element bytes

  std::size_t elements() const;
  std::vector<double> as_double() const;  // f32/f64 records only
};

std::string serialize_config(const ModelConfig& config);
ModelConfig parse_config_text(std::string_view text);

class Checkpoint {
 public:
  ModelConfig config;
  std::vector<CheckpointRecord> records;  // tensors only, metadata excluded

  template <typename Real>
  static Checkpoint from_model(const Transformer<Real>& model);

  const CheckpointRecord* find(std::string_view name) const;
  const CheckpointRecord& at(std::string_view name) const;
  std::size_t element_count(Partition partition) const;
  std::vector<SparseTableInfo> sparse_tables() const;

  std::vector<std::uint8_t> encode() const;
  static Checkpoint decode(std::span<const std::uint8_t> bytes);
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Real>
void save_checkpoint(const Transformer<Real>& model, const std::filesystem::path& path) {
  save_checkpoint(Checkpoint::from_model(model), path);
}

// Copies a checkpoint record into a parameter of the same shape.
template <typename Real>
void load_parameter(const CheckpointRecord& record, Parameter<Real>& param);

enum class Strategy { kNT, kFT, kST, kFTSF, kSTSF };

inline constexpr Strategy kAllStrategies[] = {Strategy::kNT, Strategy::kFT, Strategy::kST,
                                              Strategy::kFTSF, Strategy::kSTSF};

// CLI names: nt, ft, st, ft-sf, st-sf (case-insensitive; & and _ accepted).
Strategy parse_strategy(std::string_view text);
std::string_view strategy_name(Strategy s);

struct StrategyTraits {
  bool sparse_copied = false;
  bool dense_copied = false;
  bool sparse_frozen = false;
  friend bool operator==(const StrategyTraits&, const StrategyTraits&) = default;
};

StrategyTraits traits(Strategy s);

struct TransferOptions {
  bool lenient = false;  // transfer the matching subset instead of rejecting
  bool freeze = false;
};

struct TransferReport {
  std::vector<std::string> transferred;           // field names
  std::vector<std::string> missing_in_target;     // checkpoint tables not used
  std::vector<std::string> missing_in_checkpoint; // target tables left fresh
  std::vector<std::string> mismatched;            // same field, other vocab/dim
  std::vector<std::string> dense_copied;          // parameter names
  std::vector<std::string> frozen;                // parameter names

  std::string summary() const;
};

// Loads the checkpoint's sparse tables into any model exposing the sparse
// registry. Strict mode requires the two table sets to match exactly.
TransferReport cross_architecture_transfer(const Checkpoint& ckpt, SparseRegistry& target,
                                           const TransferOptions& options = {});

// Initializes `target` (assumed freshly seeded) per the strategy and sets
// its freeze mask. NT rejects a checkpoint; the others require one.
template <typename Real>
TransferReport apply_strategy(Strategy strategy, const Checkpoint* pretrained,
                              Transformer<Real>& target, bool lenient = false);

// Raises TransferError when `apply_strategy` would reject the combination,
// without touching any model.
void check_strategy(Strategy strategy, const Checkpoint* pretrained,
                    const ModelConfig& target, bool lenient = false);

}  // namespace gpsd
