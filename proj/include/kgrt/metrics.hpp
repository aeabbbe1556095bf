#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kgrt::eval {

// Area under the ROC curve via the Mann-Whitney statistic with tied scores
// counted as one half. Throws Error unless both classes are present.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

// Average precision: mean over positives of the precision at that positive's
// rank, ranking by descending score with ties kept in input order. Throws
// Error if there is no positive.
double auc_pr(std::span<const double> scores, std::span<const int> labels);

// One evaluation row, mirroring the columns steps,auc_pr,auc_roc,loss.
struct ReportRow {
  std::size_t step = 0;
  double auc_pr = 0.0;
  double auc_roc = 0.0;
  double loss = 0.0;
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

}  // namespace kgrt::eval
