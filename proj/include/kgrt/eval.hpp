#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "kgrt/extract.hpp"
#include "kgrt/kg.hpp"
#include "kgrt/metrics.hpp"

namespace kgrt::eval {

inline constexpr const char* kReportHeader = "steps,auc_pr,auc_roc,loss";

// Rows must have strictly increasing steps, metrics in [0, 1] and finite loss.
void validate_report(const std::vector<ReportRow>& rows);  // throws Error

std::string report_to_csv(const std::vector<ReportRow>& rows);
void save_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path);
std::vector<ReportRow> parse_report(std::istream& in, const std::string& source);
std::vector<ReportRow> load_report(const std::filesystem::path& path);

struct RecoveryScore {
  double edge_precision = 0.0;
  double edge_recall = 0.0;
  double edge_f1 = 0.0;
  double relation_accuracy = 0.0;  // among intersecting pairs; 0 if none
  std::size_t true_edges = 0;
  std::size_t recovered = 0;
  std::size_t intersection = 0;
  std::size_t relation_matches = 0;
};

// Precision and recall over ordered (head, tail) pairs. Recovered entries with
// score below match_floor are dropped first.
RecoveryScore score_recovery(const kg::KnowledgeGraph& truth, const extract::RecoveredGraph& recovered,
                             double match_floor = 0.0);

struct Comparison {
  std::vector<std::size_t> steps;
  std::vector<double> loss_ratio;  // modified / original, per step
  double mean_loss_modified = 0.0;
  double mean_loss_original = 0.0;
  double mean_loss_ratio = 0.0;  // ratio of the means
  double mean_auc_roc_modified = 0.0;
  double mean_auc_roc_original = 0.0;
  double mean_auc_pr_modified = 0.0;
  double mean_auc_pr_original = 0.0;
  double auc_roc_delta = 0.0;  // modified - original
  double auc_pr_delta = 0.0;
  double loss_ratio_threshold = 0.10;
  bool finding_loss = false;  // mean modified loss < threshold * mean original loss
  bool finding_auc = false;   // mean modified AUC-ROC < mean original AUC-ROC
};

// Both reports need the same non-empty step grid (throws Error otherwise).
Comparison compare_runs(const std::vector<ReportRow>& modified, const std::vector<ReportRow>& original,
                        double loss_ratio_threshold = 0.10);

// Flat `key=value` lines; reals use %.17g so values survive a text round trip.
using Summary = std::vector<std::pair<std::string, std::string>>;
std::string format_real(double x);
void append(Summary& s, const std::string& prefix, const Comparison& c);
void append(Summary& s, const std::string& prefix, const RecoveryScore& r);
std::string summary_to_text(const Summary& s);
void save_summary(const Summary& s, const std::filesystem::path& path);
Summary parse_summary(std::istream& in, const std::string& source);
Summary load_summary(const std::filesystem::path& path);
const std::string& summary_value(const Summary& s, const std::string& key);  // throws Error if absent

}  // namespace kgrt::eval
