// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "gpsd/analysis.hpp"

namespace gpsd {

std::size_t count_dense_params(const ModelConfig& c) {
  c.validate();
  const std::size_t v = c.hidden;
  const std::size_t f = c.resolved_ffn_dim();
  std::size_t n = c.segments * v;
  n += c.layers * (2 * v + 4 * v * v + 3 * v * f);
  n += v;
  std::size_t in = v + c.extra_features;
  for (auto out : c.resolved_head_hidden()) {
    n += in * out + out;
    in = out;
  }
  n += in + 1;
  return n;
}

std::size_t count_sparse_params(const ModelConfig& c) {
  std::size_t n = 0;
  for (const auto& f : c.fields) n += f.size * c.hidden;
  return n;
}

std::string_view fit_direction_name(FitDirection d) {
  return d == FitDirection::kSaturatingUp ? "saturating-up" : "saturating-down";
}

double PowerLawFit::predict(double n) const {
  const double t = a * std::pow(n, -b);
  return direction == FitDirection::kSaturatingUp ? c - t : c + t;
}

namespace {

struct Trial {
  double a, c, rms;
};

// Least squares for (a, c) at fixed b, with a constrained to be >= 0.
Trial solve(std::span<const double> n, std::span<const double> y, double b, FitDirection dir) {
  const double sign = dir == FitDirection::kSaturatingUp ? -1.0 : 1.0;
  const double m = static_cast<double>(n.size());
  double sx = 0, sy = 0;
  std::vector<double> x(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    x[i] = sign * std::pow(n[i], -b);
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / m, my = sy / m;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  double a = sxx > 0 ? sxy / sxx : 0.0;
  if (!(a > 0)) a = 0;
  const double c = my - a * mx;
  double ss = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double r = y[i] - (c + a * x[i]);
    ss += r * r;
  }
  return {a, c, std::sqrt(ss / m)};
}

}  // namespace

PowerLawFit fit_power_law(std::span<const double> n, std::span<const double> y,
                          FitDirection direction) {
  if (n.size() != y.size()) throw std::invalid_argument("N and y differ in length");
  if (n.size() < 4) throw std::invalid_argument("power-law fit needs at least 4 points");
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!(n[i] > 0) || !std::isfinite(y[i])) throw std::invalid_argument("invalid point");
    if (i > 0 && !(n[i] > n[i - 1])) throw std::invalid_argument("N must be strictly increasing");
  }

  PowerLawFit fit;
  fit.direction = direction;
  if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) {
    fit.c = y[0];
    fit.b = 1.0;
    fit.warning = "all y values equal; amplitude a = 0";
    return fit;
  }

  constexpr int kSteps = 400;
  auto b_at = [](double k) { return std::pow(10.0, -3.0 + 0.01 * k); };
  int best_k = 0;
  Trial best = solve(n, y, b_at(0), direction);
  for (int k = 1; k <= kSteps; ++k) {
    const Trial t = solve(n, y, b_at(k), direction);
    if (t.rms < best.rms) {
      best = t;
      best_k = k;
    }
  }
  fit.a = best.a;
  fit.b = b_at(best_k);
  fit.c = best.c;
  fit.rms = best.rms;
  fit.grid_rms = best.rms;

  // Golden-section search on log10(b) between the neighbouring grid points.
  double lo = std::max(0, best_k - 1), hi = std::min(kSteps, best_k + 1);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  double f1 = solve(n, y, b_at(x1), direction).rms;
  double f2 = solve(n, y, b_at(x2), direction).rms;
  for (int iter = 0; iter < 100 && hi - lo > 1e-12; ++iter) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = solve(n, y, b_at(x1), direction).rms;
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = solve(n, y, b_at(x2), direction).rms;
    }
  }
  const double kb = 0.5 * (lo + hi);
  const Trial refined = solve(n, y, b_at(kb), direction);
  if (refined.rms < fit.rms) {
    fit.a = refined.a;
    fit.b = b_at(kb);
    fit.c = refined.c;
    fit.rms = refined.rms;
  }
  if (fit.a == 0) fit.warning = "no decreasing trend; amplitude a = 0";
  return fit;
}

void write_scaling_csv(const std::vector<ScalingPoint>& points,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "code,dense_params,auc,loss,seed\n";
  char buf[256];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%llu\n", p.code.c_str(),
                  p.dense_params, p.auc, p.loss, static_cast<unsigned long long>(p.seed));
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::map<std::string, std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(path.string() + ": row has " + std::to_string(cells.size()) +
                               " cells, header has " + std::to_string(header.size()));
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

const std::string& cell(const std::map<std::string, std::string>& row, const std::string& key,
                        const std::filesystem::path& path) {
  auto it = row.find(key);
  if (it == row.end()) throw std::runtime_error(path.string() + ": no column '" + key + "'");
  return it->second;
}

}  // namespace

std::vector<ScalingPoint> read_scaling_csv(const std::filesystem::path& path) {
  std::vector<ScalingPoint> out;
  for (const auto& row : read_csv(path)) {
    ScalingPoint p;
    p.code = cell(row, "code", path);
    p.dense_params = std::stoull(cell(row, "dense_params", path));
    p.auc = std::stod(cell(row, "auc", path));
    p.loss = std::stod(cell(row, "loss", path));
    p.seed = std::stoull(cell(row, "seed", path));
    out.push_back(p);
  }
  return out;
}

void read_csv_columns(const std::filesystem::path& path, const std::string& x_column,
                      const std::string& y_column, std::vector<double>& x,
                      std::vector<double>& y) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& row : read_csv(path)) {
    pts.emplace_back(std::stod(cell(row, x_column, path)), std::stod(cell(row, y_column, path)));
  }
  std::sort(pts.begin(), pts.end());
  x.clear();
  y.clear();
  for (auto [a, b] : pts) {
    x.push_back(a);
    y.push_back(b);
  }
}

std::string format_fit(const std::string& label, const PowerLawFit& fit) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s (%s): a=%.6g b=%.6g c=%.6g rms=%.6g", label.c_str(),
                std::string(fit_direction_name(fit.direction)).c_str(), fit.a, fit.b, fit.c,
                fit.rms);
  std::string s = buf;
  if (!fit.warning.empty()) s += " warning: " + fit.warning;
  return s;
}

}  // namespace gpsd
