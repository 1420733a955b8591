// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gpsd/data.hpp"

namespace gpsd {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> normal_matrix(std::size_t rows, std::size_t cols, double stddev,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> out(rows * cols);
  for (auto& x : out) x = normal(rng);
  return out;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::int32_t InteractionLog::category_of(std::int32_t item) const {
  if (item >= 0 && static_cast<std::size_t>(item) < item_category.size()) {
    return item_category[static_cast<std::size_t>(item)];
  }
  return kPadId;
}

void InteractionLog::validate() const {
  for (const auto& r : rows) {
    if (r.item < kFirstRealId || static_cast<std::size_t>(r.item) >= item_vocab) {
      throw std::out_of_range("item id " + std::to_string(r.item) + " outside vocabulary");
    }
    if (r.category < kFirstRealId ||
        static_cast<std::size_t>(r.category) >= category_vocab) {
      throw std::out_of_range("category id " + std::to_string(r.category) +
                              " outside vocabulary");
    }
    if (r.timestamp < 0) throw std::out_of_range("negative timestamp");
    if (r.label != 0 && r.label != 1) throw std::out_of_range("label must be 0 or 1");
  }
}

InteractionLog generate_synthetic(const SyntheticConfig& c) {
  if (c.users < 1 || c.items < 1 || c.events < 1 || c.latent_dim < 1 ||
      c.categories < 1) {
    throw ConfigError("synthetic data: users, items, events, categories and latent dim must be >= 1");
  }
  if (c.zipf < 0) throw ConfigError("synthetic data: zipf exponent must be >= 0");
  if (!(c.positive_rate > 0 && c.positive_rate < 1)) {
    throw ConfigError("synthetic data: positive rate must be in (0,1)");
  }
  if (!(c.days > 0)) throw ConfigError("synthetic data: days must be > 0");

  std::mt19937_64 rng(c.seed);
  const std::size_t k = c.latent_dim;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(k));
  const auto users = normal_matrix(c.users, k, stddev, rng);
  const auto items = normal_matrix(c.items, k, stddev, rng);
  const auto centroids = normal_matrix(c.categories, k, 1.0, rng);
  const double gain = c.signal * std::sqrt(static_cast<double>(k));

  InteractionLog log;
  log.item_vocab = c.items + kFirstRealId;
  log.category_vocab = c.categories + kFirstRealId;
  log.item_category.assign(log.item_vocab, kPadId);
  for (std::size_t i = 0; i < c.items; ++i) {
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t cat = 0; cat < c.categories; ++cat) {
      const double s = dot(items.data() + i * k, centroids.data() + cat * k, k);
      if (s > best_score) {
        best_score = s;
        best = cat;
      }
    }
    log.item_category[i + kFirstRealId] = static_cast<std::int32_t>(best) + kFirstRealId;
  }

  // Zipf exposure over a random item order.
  std::vector<std::size_t> order(c.items);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> weights(c.items);
  for (std::size_t r = 0; r < c.items; ++r) {
    weights[r] = std::pow(static_cast<double>(r + 1), -c.zipf);
  }
  std::discrete_distribution<std::size_t> rank_dist(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> user_dist(0, c.users - 1);

  // Bias calibration on an independent sample of exposures.
  std::vector<double> affinities(20000);
  {
    std::mt19937_64 cal(c.seed ^ 0x9e3779b97f4a7c15ULL);
    for (auto& a : affinities) {
      const std::size_t u = user_dist(cal);
      const std::size_t i = order[rank_dist(cal)];
      a = gain * dot(users.data() + u * k, items.data() + i * k, k);
    }
  }
  double lo = -30, hi = 30;
  for (int iter = 0; iter < 100; ++iter) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0;
    for (double a : affinities) mean += sigmoid(a + mid);
    mean /= static_cast<double>(affinities.size());
    (mean < c.positive_rate ? lo : hi) = mid;
  }
  const double bias = 0.5 * (lo + hi);

  const double span = c.days * 86400.0;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  log.rows.reserve(c.events);
  for (std::size_t e = 0; e < c.events; ++e) {
    const std::size_t u = user_dist(rng);
    const std::size_t i = order[rank_dist(rng)];
    const double p = sigmoid(gain * dot(users.data() + u * k, items.data() + i * k, k) + bias);
    Interaction row;
    row.user = static_cast<std::int64_t>(u);
    row.timestamp = static_cast<std::int64_t>(
        std::floor(span * static_cast<double>(e) / static_cast<double>(c.events)));
    row.item = static_cast<std::int32_t>(i) + kFirstRealId;
    row.category = log.item_category[static_cast<std::size_t>(row.item)];
    row.label = coin(rng) < p ? 1 : 0;
    log.rows.push_back(row);
  }
  return log;
}

void write_log_tsv(const InteractionLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "user\ttimestamp\titem\tcategory\tlabel\n";
  for (const auto& r : log.rows) {
    out << r.user << '\t' << r.timestamp << '\t' << r.item << '\t' << r.category
        << '\t' << r.label << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

InteractionLog read_log_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "user\ttimestamp\titem\tcategory\tlabel") {
    throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
  }
  InteractionLog log;
  std::int32_t max_item = kFirstRealId, max_cat = kFirstRealId;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    Interaction r;
    char extra = 0;
    if (!(fields >> r.user >> r.timestamp >> r.item >> r.category >> r.label) ||
        (fields >> extra)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": malformed row");
    }
    max_item = std::max(max_item, r.item);
    max_cat = std::max(max_cat, r.category);
    log.rows.push_back(r);
  }
  log.item_vocab = static_cast<std::size_t>(max_item) + 1;
  log.category_vocab = static_cast<std::size_t>(max_cat) + 1;
  log.item_category.assign(log.item_vocab, kPadId);
  for (const auto& r : log.rows) {
    if (r.item >= 0) log.item_category[static_cast<std::size_t>(r.item)] = r.category;
  }
  log.validate();
  return log;
}

}  // namespace gpsd
