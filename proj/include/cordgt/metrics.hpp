#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "cordgt/core.hpp"

namespace cordgt {

/// Average precision: mean of precision-at-rank over the positives with
/// scores sorted descending (ties keep input order).
inline double average_precision(std::span<const double> scores,
                                std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw DataError("average_precision: bad inputs");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double hits = 0.0, sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] > 0) {
      hits += 1.0;
      sum += hits / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0.0) throw DataError("average_precision: no positives");
  return sum / hits;
}

/// AUC as P(score_pos > score_neg) with ties counted 0.5, computed through
/// midranks (exactly the pairwise definition).
inline double roc_auc(std::span<const double> scores,
                      std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw DataError("roc_auc: bad inputs");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double rank_sum = 0.0;
  std::int64_t n_pos = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] > 0) {
      rank_sum += rank[k];
      ++n_pos;
    }
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("roc_auc: need both classes");
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) *
                                  static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace cordgt
