#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "kgrt/kg.hpp"
#include "kgrt/numerics.hpp"

namespace kgrt::cohort {

// One co-occurrence sample: the token sequence of the model.
struct VisitRecord {
  std::uint64_t visit_id = 0;
  std::vector<std::string> diagnoses;
  std::vector<std::string> procedures;
  int label = 0;
  friend bool operator==(const VisitRecord&, const VisitRecord&) = default;
};

struct CohortOptions {
  std::size_t n_visits = 500;
  std::size_t diagnoses_min = 1;
  std::size_t diagnoses_max = 3;
  // Inclusion probability of each procedure linked to a sampled diagnosis.
  double link_rate = 0.8;
  // Inclusion probability of each procedure not linked to any sampled diagnosis.
  double noise_rate = 0.05;
  // Size of the per-run "risk" procedure subset driving the default label.
  std::size_t risk_procedures = 2;
  std::string diagnosis_type = "diagnosis";
  std::string procedure_type = "procedure";
};

using LabelRule = std::function<int(const VisitRecord&)>;

// Procedures linked (in either edge direction) to a diagnosis.
std::map<std::string, std::set<std::string>> linked_procedures(const kg::KnowledgeGraph& g,
                                                               const CohortOptions& options);

// Label 1 iff the visit contains any of `risk`.
LabelRule any_procedure_rule(std::set<std::string> risk);

// Draws the risk subset from procedures that have at least one KG link.
std::set<std::string> choose_risk_procedures(const kg::KnowledgeGraph& g, const CohortOptions& options,
                                             std::uint64_t seed);

// Default label rule: any_procedure_rule over choose_risk_procedures(g, options, seed).
std::vector<VisitRecord> sample_cohort(const kg::KnowledgeGraph& g, const CohortOptions& options,
                                       std::uint64_t seed);
std::vector<VisitRecord> sample_cohort(const kg::KnowledgeGraph& g, const CohortOptions& options,
                                       const LabelRule& label_rule, std::uint64_t seed);

void validate_visit(const VisitRecord& visit);

std::string cohort_to_jsonl(const std::vector<VisitRecord>& visits);
void save_cohort(const std::vector<VisitRecord>& visits, const std::filesystem::path& path);
std::vector<VisitRecord> parse_cohort(std::istream& in, const std::string& source);
std::vector<VisitRecord> load_cohort(const std::filesystem::path& path);

// Pooled cross-type co-occurrence counts and p(target | source).
class ConditionalTable {
 public:
  using Key = std::pair<std::string, std::string>;

  void add(const std::string& source, const std::string& target);
  void note_code(const std::string& code) { universe_.insert(code); }

  std::uint64_t count(const std::string& source, const std::string& target) const;
  // p(target | source); 0 when the pair never co-occurred.
  double prob(const std::string& target, const std::string& source) const;

  const std::map<Key, std::uint64_t>& counts() const { return counts_; }
  const std::set<std::string>& universe() const { return universe_; }
  bool knows(const std::string& code) const { return universe_.contains(code); }

  friend bool operator==(const ConditionalTable&, const ConditionalTable&) = default;

 private:
  std::map<Key, std::uint64_t> counts_;
  std::map<std::string, std::uint64_t> source_totals_;
  std::set<std::string> universe_;
};

// count(a, b) = visits containing both a and b, for every diagnosis/procedure
// pair in both directions.
ConditionalTable count_cooccurrence(const std::vector<VisitRecord>& visits);

// CSV `source,target,count,prob`.
std::string table_to_csv(const ConditionalTable& table);
void save_table_csv(const ConditionalTable& table, const std::filesystem::path& path);

struct PriorOptions {
  // Forbid attention between tokens of the same type (the diagonal is always forbidden).
  bool forbid_same_type = true;
  std::string diagnosis_type = "diagnosis";
  std::string procedure_type = "procedure";
};

// Fixed first-block attention of one visit. Tokens are the diagnoses then the
// procedures. P is zero exactly where M is kMaskForbidden.
struct PriorMatrix {
  std::vector<std::string> token_codes;
  std::vector<std::string> token_types;
  num::DenseMatrix prior;
  num::DenseMatrix mask;
};

PriorMatrix build_visit_prior(const VisitRecord& visit, const ConditionalTable& table,
                              const PriorOptions& options = {});

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> codes);
  static Vocabulary from_graph(const kg::KnowledgeGraph& g);

  long index_of(const std::string& code) const;
  const std::vector<std::string>& codes() const { return codes_; }
  std::size_t size() const { return codes_.size(); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.codes_ == b.codes_; }

 private:
  std::vector<std::string> codes_;
  std::map<std::string, long> index_;
};

// A visit padded to a fixed token count. Padding rows attend only to
// themselves, padding columns are forbidden for real tokens, and padding rows
// are flagged invalid so they never enter KL averages or pooling.
struct EncodedVisit {
  std::uint64_t visit_id = 0;
  PriorMatrix prior;
  std::vector<long> token_ids;  // -1 for padding
  std::vector<bool> valid;
  std::size_t n_tokens = 0;
  std::size_t n_diagnoses = 0;
  int label = 0;
};

std::size_t max_visit_tokens(const std::vector<VisitRecord>& visits);

std::vector<EncodedVisit> encode_batch(const std::vector<VisitRecord>& visits, const ConditionalTable& table,
                                       const Vocabulary& vocab, std::size_t max_tokens,
                                       const PriorOptions& options = {});

// Inverse of the padding: (diagnoses, procedures).
std::pair<std::vector<std::string>, std::vector<std::string>> unpad(const EncodedVisit& encoded);

}  // namespace kgrt::cohort
