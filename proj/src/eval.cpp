#include "kgrt/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "kgrt/error.hpp"

namespace kgrt::eval {

namespace {

void write_file(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return in;
}

double parse_real(const std::string& field) {
  std::size_t used = 0;
  const double x = std::stod(field, &used);
  if (used != field.size()) throw Error("malformed number '" + field + "'");
  return x;
}

double mean_of(const std::vector<ReportRow>& rows, double ReportRow::*field) {
  double s = 0.0;
  for (const auto& r : rows) s += r.*field;
  return s / static_cast<double>(rows.size());
}

}  // namespace

std::string format_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void validate_report(const std::vector<ReportRow>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (i > 0 && r.step <= rows[i - 1].step) throw Error("report: steps must be strictly increasing");
    if (!(r.auc_pr >= 0.0 && r.auc_pr <= 1.0)) throw Error("report: auc_pr outside [0, 1]");
    if (!(r.auc_roc >= 0.0 && r.auc_roc <= 1.0)) throw Error("report: auc_roc outside [0, 1]");
    if (!std::isfinite(r.loss)) throw Error("report: non-finite loss");
  }
}

std::string report_to_csv(const std::vector<ReportRow>& rows) {
  validate_report(rows);
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + format_real(r.auc_pr) + "," + format_real(r.auc_roc) + "," +
           format_real(r.loss) + "\n";
  return out;
}

void save_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  write_file(report_to_csv(rows), path);
}

std::vector<ReportRow> parse_report(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != kReportHeader)
    throw ParseError(source, line_no, std::string("expected header '") + kReportHeader + "'");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string f;
      while (std::getline(ss, f, ',')) fields.push_back(f);
      if (fields.size() != 4) throw Error("expected 4 fields");
      std::size_t used = 0;
      const unsigned long long step = std::stoull(fields[0], &used);
      if (used != fields[0].size()) throw Error("malformed step '" + fields[0] + "'");
      rows.push_back({static_cast<std::size_t>(step), parse_real(fields[1]), parse_real(fields[2]),
                      parse_real(fields[3])});
      validate_report(rows);
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return rows;
}

std::vector<ReportRow> load_report(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_report(in, path.string());
}

RecoveryScore score_recovery(const kg::KnowledgeGraph& truth, const extract::RecoveredGraph& recovered,
                             double match_floor) {
  std::map<kg::EdgePair, std::set<std::string>> true_relations;
  for (const auto& e : truth.edges()) true_relations[{e.head, e.tail}].insert(e.relation);
  RecoveryScore s;
  s.true_edges = true_relations.size();
  for (const auto& [pair, t] : recovered.triples) {
    if (t.score < match_floor) continue;
    ++s.recovered;
    auto it = true_relations.find(pair);
    if (it == true_relations.end()) continue;
    ++s.intersection;
    if (it->second.contains(t.best.relation)) ++s.relation_matches;
  }
  if (s.recovered > 0) s.edge_precision = static_cast<double>(s.intersection) / static_cast<double>(s.recovered);
  if (s.true_edges > 0) s.edge_recall = static_cast<double>(s.intersection) / static_cast<double>(s.true_edges);
  if (s.edge_precision + s.edge_recall > 0.0)
    s.edge_f1 = 2.0 * s.edge_precision * s.edge_recall / (s.edge_precision + s.edge_recall);
  if (s.intersection > 0)
    s.relation_accuracy = static_cast<double>(s.relation_matches) / static_cast<double>(s.intersection);
  return s;
}

Comparison compare_runs(const std::vector<ReportRow>& modified, const std::vector<ReportRow>& original,
                        double loss_ratio_threshold) {
  if (modified.empty() || original.empty()) throw Error("compare_runs: reports must not be empty");
  if (modified.size() != original.size()) throw Error("compare_runs: reports have different step grids");
  Comparison c;
  for (std::size_t i = 0; i < modified.size(); ++i) {
    if (modified[i].step != original[i].step) throw Error("compare_runs: reports have different step grids");
    c.steps.push_back(modified[i].step);
    c.loss_ratio.push_back(modified[i].loss / original[i].loss);
  }
  c.mean_loss_modified = mean_of(modified, &ReportRow::loss);
  c.mean_loss_original = mean_of(original, &ReportRow::loss);
  c.mean_loss_ratio = c.mean_loss_modified / c.mean_loss_original;
  c.mean_auc_roc_modified = mean_of(modified, &ReportRow::auc_roc);
  c.mean_auc_roc_original = mean_of(original, &ReportRow::auc_roc);
  c.mean_auc_pr_modified = mean_of(modified, &ReportRow::auc_pr);
  c.mean_auc_pr_original = mean_of(original, &ReportRow::auc_pr);
  c.auc_roc_delta = c.mean_auc_roc_modified - c.mean_auc_roc_original;
  c.auc_pr_delta = c.mean_auc_pr_modified - c.mean_auc_pr_original;
  c.loss_ratio_threshold = loss_ratio_threshold;
  c.finding_loss = c.mean_loss_modified < loss_ratio_threshold * c.mean_loss_original;
  c.finding_auc = c.mean_auc_roc_modified < c.mean_auc_roc_original;
  return c;
}

void append(Summary& s, const std::string& prefix, const Comparison& c) {
  auto put = [&](const std::string& k, const std::string& v) { s.emplace_back(prefix + k, v); };
  put("steps", std::to_string(c.steps.size()));
  for (std::size_t i = 0; i < c.steps.size(); ++i)
    put("loss_ratio.step_" + std::to_string(c.steps[i]), format_real(c.loss_ratio[i]));
  put("mean_loss_modified", format_real(c.mean_loss_modified));
  put("mean_loss_original", format_real(c.mean_loss_original));
  put("mean_loss_ratio", format_real(c.mean_loss_ratio));
  put("mean_auc_roc_modified", format_real(c.mean_auc_roc_modified));
  put("mean_auc_roc_original", format_real(c.mean_auc_roc_original));
  put("mean_auc_pr_modified", format_real(c.mean_auc_pr_modified));
  put("mean_auc_pr_original", format_real(c.mean_auc_pr_original));
  put("auc_roc_delta", format_real(c.auc_roc_delta));
  put("auc_pr_delta", format_real(c.auc_pr_delta));
  put("loss_ratio_threshold", format_real(c.loss_ratio_threshold));
  put("finding_loss_ratio_below_threshold", c.finding_loss ? "true" : "false");
  put("finding_modified_auc_roc_lower", c.finding_auc ? "true" : "false");
}

void append(Summary& s, const std::string& prefix, const RecoveryScore& r) {
  auto put = [&](const std::string& k, const std::string& v) { s.emplace_back(prefix + k, v); };
  put("edge_precision", format_real(r.edge_precision));
  put("edge_recall", format_real(r.edge_recall));
  put("edge_f1", format_real(r.edge_f1));
  put("relation_accuracy", format_real(r.relation_accuracy));
  put("true_edges", std::to_string(r.true_edges));
  put("recovered", std::to_string(r.recovered));
  put("intersection", std::to_string(r.intersection));
  put("relation_matches", std::to_string(r.relation_matches));
}

std::string summary_to_text(const Summary& s) {
  std::string out;
  for (const auto& [k, v] : s) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw Error("summary: invalid key or value for '" + k + "'");
    out += k + "=" + v + "\n";
  }
  return out;
}

void save_summary(const Summary& s, const std::filesystem::path& path) { write_file(summary_to_text(s), path); }

Summary parse_summary(std::istream& in, const std::string& source) {
  Summary s;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError(source, line_no, "expected key=value");
    s.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return s;
}

Summary load_summary(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_summary(in, path.string());
}

const std::string& summary_value(const Summary& s, const std::string& key) {
  for (const auto& [k, v] : s)
    if (k == key) return v;
  throw Error("summary: missing key '" + key + "'");
}

}  // namespace kgrt::eval
