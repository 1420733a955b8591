// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gpsd {

struct SparseTableInfo {
  std::string field;
  std::size_t vocab = 0;
  std::size_t dim = 0;
  friend bool operator==(const SparseTableInfo&, const SparseTableInfo&) = default;
};

// What a model must expose to receive transferred embedding tables. Any
// dense architecture can implement it; only the id-keyed tables matter.
class SparseRegistry {
 public:
  virtual ~SparseRegistry() = default;

  virtual std::vector<SparseTableInfo> sparse_tables() const = 0;
  // rows: vocab*dim values, row-major.
  virtual void load_sparse_table(const std::string& field,
                                 std::span<const double> rows) = 0;
  virtual void freeze_sparse_table(const std::string& field) = 0;
};

}  // namespace gpsd
