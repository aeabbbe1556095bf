#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "kgrt/rng.hpp"

namespace kgrt::testing {

// O(n^2) pair counting: a positive outscoring a negative counts 1, a tie 1/2.
inline double auc_roc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Walks the precision-recall curve of the stable descending ranking and sums
// precision times the recall increment at each cut.
inline double auc_pr_curve(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double positives = 0.0;
  for (int v : y) positives += v;
  double tp = 0.0;
  double area = 0.0;
  double recall_before = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    tp += y[order[k]];
    const double recall = tp / positives;
    area += (tp / static_cast<double>(k + 1)) * (recall - recall_before);
    recall_before = recall;
  }
  return area;
}

// Random scored instance with both classes; coarse scores make ties common.
inline void random_scored(Rng& rng, std::vector<double>& s, std::vector<int>& y, std::size_t max_n = 40) {
  const std::size_t n = 2 + rng.below(max_n - 1);
  const bool coarse = rng.bernoulli(0.5);
  s.assign(n, 0.0);
  y.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = coarse ? static_cast<double>(rng.below(5)) : rng.uniform(-3.0, 3.0);
    y[i] = rng.bernoulli(0.4) ? 1 : 0;
  }
  const std::size_t a = rng.below(n);
  const std::size_t b = (a + 1 + rng.below(n - 1)) % n;
  y[a] = 1;
  y[b] = 0;
}

}  // namespace kgrt::testing
