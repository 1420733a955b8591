// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpsd/model.hpp"

namespace gpsd {

class AucError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mann-Whitney AUC via average ranks; ties count one half. Labels are 0/1.
// Throws AucError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);
double auc(std::span<const float> scores, std::span<const float> labels);

// Element count of every dense tensor of a model built from `config`,
// computed without allocating the model.
std::size_t count_dense_params(const ModelConfig& config);
std::size_t count_sparse_params(const ModelConfig& config);

enum class FitDirection { kSaturatingUp, kSaturatingDown };

std::string_view fit_direction_name(FitDirection d);

// y = c - a*N^-b (saturating up) or y = c + a*N^-b (saturating down).
struct PowerLawFit {
  double a = 0;
  double b = 0;
  double c = 0;
  double rms = 0;
  double grid_rms = 0;  // best residual before the golden-section refinement
  FitDirection direction = FitDirection::kSaturatingUp;
  std::string warning;

  double predict(double n) const;
};

PowerLawFit fit_power_law(std::span<const double> n, std::span<const double> y,
                          FitDirection direction);

struct ScalingPoint {
  std::string code;
  std::size_t dense_params = 0;
  double auc = 0;
  double loss = 0;
  std::uint64_t seed = 0;
};

// `code,dense_params,auc,loss,seed`
void write_scaling_csv(const std::vector<ScalingPoint>& points,
                       const std::filesystem::path& path);
std::vector<ScalingPoint> read_scaling_csv(const std::filesystem::path& path);

// Reads numeric column `column` against `dense_params` from a scaling CSV
// (or any CSV with those headers); rows sorted by the x column.
void read_csv_columns(const std::filesystem::path& path, const std::string& x_column,
                      const std::string& y_column, std::vector<double>& x,
                      std::vector<double>& y);

std::string format_fit(const std::string& label, const PowerLawFit& fit);

}  // namespace gpsd
