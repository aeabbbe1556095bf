#include "kgrt/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "kgrt/error.hpp"

namespace kgrt::eval {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* op) {
  if (scores.size() != labels.size()) throw ShapeError(std::string(op) + ": scores and labels differ in length");
  for (int y : labels)
    if (y != 0 && y != 1) throw Error(std::string(op) + ": labels must be 0 or 1");
}

}  // namespace

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "auc_roc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of 1-based mid-ranks of the positives.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += mid_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw Error("auc_roc: both classes must be present");
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double auc_pr(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "auc_pr");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double precision_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (labels[order[rank]] != 1) continue;
    ++hits;
    precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  if (hits == 0) throw Error("auc_pr: no positive labels");
  return precision_sum / static_cast<double>(hits);
}

}  // namespace kgrt::eval
