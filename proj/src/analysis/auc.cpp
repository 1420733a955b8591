// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>

#include "gpsd/analysis.hpp"

namespace gpsd {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw AucError("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of the positives, doubled to stay
  // in integers.
  std::uint64_t rank_sum2 = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t avg2 = i + 1 + j;  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      const int l = labels[order[t]];
      if (l != 0 && l != 1) throw AucError("labels must be 0 or 1");
      if (l == 1) {
        rank_sum2 += avg2;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw AucError("AUC needs both positive and negative labels");
  const std::uint64_t pp = static_cast<std::uint64_t>(pos) * (pos + 1);
  return static_cast<double>(rank_sum2 - pp) /
         (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double auc(std::span<const float> scores, std::span<const float> labels) {
  if (scores.size() != labels.size()) throw AucError("scores and labels differ in length");
  std::vector<double> s(scores.begin(), scores.end());
  std::vector<int> l(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0f && labels[i] != 1.0f) throw AucError("labels must be 0 or 1");
    l[i] = labels[i] == 1.0f ? 1 : 0;
  }
  return auc(std::span<const double>(s), std::span<const int>(l));
}

}  // namespace gpsd
