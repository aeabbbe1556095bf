#include "kgrt/cohort.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kgrt/error.hpp"
#include "kgrt/rng.hpp"

namespace kgrt::cohort {

using ordered_json = nlohmann::ordered_json;

std::map<std::string, std::set<std::string>> linked_procedures(const kg::KnowledgeGraph& g,
                                                               const CohortOptions& options) {
  std::map<std::string, std::set<std::string>> links;
  for (const auto& d : g.codes_of_type(options.diagnosis_type)) links[d];
  for (const auto& e : g.edges()) {
    const auto& ht = g.type_of(e.head);
    const auto& tt = g.type_of(e.tail);
    if (ht == options.diagnosis_type && tt == options.procedure_type) links[e.head].insert(e.tail);
    if (ht == options.procedure_type && tt == options.diagnosis_type) links[e.tail].insert(e.head);
  }
  return links;
}

LabelRule any_procedure_rule(std::set<std::string> risk) {
  return [risk = std::move(risk)](const VisitRecord& v) {
    return std::any_of(v.procedures.begin(), v.procedures.end(),
                       [&](const std::string& p) { return risk.contains(p); })
               ? 1
               : 0;
  };
}

std::set<std::string> choose_risk_procedures(const kg::KnowledgeGraph& g, const CohortOptions& options,
                                             std::uint64_t seed) {
  std::set<std::string> linked;
  for (const auto& [d, procs] : linked_procedures(g, options)) linked.insert(procs.begin(), procs.end());
  std::vector<std::string> pool(linked.begin(), linked.end());
  Rng rng(seed);
  rng.shuffle(pool);
  pool.resize(std::min(pool.size(), options.risk_procedures));
  return {pool.begin(), pool.end()};
}

std::vector<VisitRecord> sample_cohort(const kg::KnowledgeGraph& g, const CohortOptions& options,
                                       std::uint64_t seed) {
  return sample_cohort(g, options, any_procedure_rule(choose_risk_procedures(g, options, derive_seed(seed, "risk"))),
                       seed);
}

std::vector<VisitRecord> sample_cohort(const kg::KnowledgeGraph& g, const CohortOptions& options,
                                       const LabelRule& label_rule, std::uint64_t seed) {
  if (options.n_visits < 1) throw Error("sample_cohort: n_visits must be at least 1");
  if (g.edges().empty()) throw Error("sample_cohort: knowledge graph has no edges");
  if (!(options.noise_rate >= 0.0 && options.noise_rate < 1.0)) {
    throw Error("sample_cohort: noise_rate must be in [0, 1)");
  }
  if (!(options.link_rate > 0.0 && options.link_rate <= 1.0)) {
    throw Error("sample_cohort: link_rate must be in (0, 1]");
  }
  const auto diagnoses = g.codes_of_type(options.diagnosis_type);
  const auto procedures = g.codes_of_type(options.procedure_type);
  if (diagnoses.empty() || procedures.empty()) {
    throw Error("sample_cohort: graph needs both '" + options.diagnosis_type + "' and '" +
                options.procedure_type + "' nodes");
  }
  const std::size_t lo = std::max<std::size_t>(1, options.diagnoses_min);
  const std::size_t hi = std::min(options.diagnoses_max, diagnoses.size());
  if (lo > hi) throw Error("sample_cohort: empty diagnoses-per-visit range");
  const auto links = linked_procedures(g, options);

  Rng rng(seed);
  std::vector<VisitRecord> visits;
  visits.reserve(options.n_visits);
  std::size_t failures = 0;
  while (visits.size() < options.n_visits) {
    const auto k = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
    std::vector<std::string> pool = diagnoses;
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    VisitRecord v;
    v.visit_id = visits.size();
    v.diagnoses.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(v.diagnoses.begin(), v.diagnoses.end());

    std::set<std::string> linked;
    for (const auto& d : v.diagnoses) linked.insert(links.at(d).begin(), links.at(d).end());
    for (const auto& p : procedures) {
      if (rng.bernoulli(linked.contains(p) ? options.link_rate : options.noise_rate)) v.procedures.push_back(p);
    }
    if (v.procedures.empty()) {
      if (++failures > 1000) throw Error("sample_cohort: more than 1000 consecutive visits without procedures");
      continue;
    }
    failures = 0;
    v.label = label_rule(v);
    visits.push_back(std::move(v));
  }
  return visits;
}

void validate_visit(const VisitRecord& visit) {
  const std::string id = std::to_string(visit.visit_id);
  if (visit.diagnoses.empty() || visit.procedures.empty()) {
    throw Error("visit " + id + ": needs at least one diagnosis and one procedure");
  }
  std::set<std::string> seen;
  for (const auto* list : {&visit.diagnoses, &visit.procedures}) {
    for (const auto& c : *list) {
      if (c.empty()) throw Error("visit " + id + ": empty code");
      if (!seen.insert(c).second) throw Error("visit " + id + ": duplicate code '" + c + "'");
    }
  }
  if (visit.label != 0 && visit.label != 1) throw Error("visit " + id + ": label must be 0 or 1");
}

std::string cohort_to_jsonl(const std::vector<VisitRecord>& visits) {
  std::ostringstream out;
  for (const auto& v : visits) {
    ordered_json line{{"visit_id", v.visit_id},
                      {"diagnoses", v.diagnoses},
                      {"procedures", v.procedures},
                      {"label", v.label}};
    out << line.dump() << '\n';
  }
  return out.str();
}

void save_cohort(const std::vector<VisitRecord>& visits, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_cohort: cannot open " + path.string() + " for writing");
  out << cohort_to_jsonl(visits);
  if (!out) throw Error("save_cohort: write failed for " + path.string());
}

std::vector<VisitRecord> parse_cohort(std::istream& in, const std::string& source) {
  std::vector<VisitRecord> visits;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    ordered_json obj = ordered_json::parse(text, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) throw ParseError(source, line_no, "malformed line");
    try {
      VisitRecord v;
      v.visit_id = obj.at("visit_id").get<std::uint64_t>();
      v.diagnoses = obj.at("diagnoses").get<std::vector<std::string>>();
      v.procedures = obj.at("procedures").get<std::vector<std::string>>();
      v.label = obj.at("label").get<int>();
      validate_visit(v);
      visits.push_back(std::move(v));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return visits;
}

std::vector<VisitRecord> load_cohort(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_cohort: cannot open " + path.string());
  return parse_cohort(in, path.string());
}

void ConditionalTable::add(const std::string& source, const std::string& target) {
  ++counts_[{source, target}];
  ++source_totals_[source];
  universe_.insert(source);
  universe_.insert(target);
}

std::uint64_t ConditionalTable::count(const std::string& source, const std::string& target) const {
  auto it = counts_.find({source, target});
  return it == counts_.end() ? 0 : it->second;
}

double ConditionalTable::prob(const std::string& target, const std::string& source) const {
  auto total = source_totals_.find(source);
  if (total == source_totals_.end()) return 0.0;
  return static_cast<double>(count(source, target)) / static_cast<double>(total->second);
}

ConditionalTable count_cooccurrence(const std::vector<VisitRecord>& visits) {
  if (visits.empty()) throw Error("count_cooccurrence: empty cohort");
  ConditionalTable table;
  for (const auto& v : visits) {
    for (const auto& d : v.diagnoses) table.note_code(d);
    for (const auto& p : v.procedures) table.note_code(p);
    for (const auto& d : v.diagnoses) {
      for (const auto& p : v.procedures) {
        table.add(d, p);
        table.add(p, d);
      }
    }
  }
  return table;
}

std::string table_to_csv(const ConditionalTable& table) {
  std::ostringstream out;
  out << "source,target,count,prob\n";
  char buf[64];
  for (const auto& [key, count] : table.counts()) {
    std::snprintf(buf, sizeof buf, "%.17g", table.prob(key.second, key.first));
    out << key.first << ',' << key.second << ',' << count << ',' << buf << '\n';
  }
  return out.str();
}

void save_table_csv(const ConditionalTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_table_csv: cannot open " + path.string() + " for writing");
  out << table_to_csv(table);
}

PriorMatrix build_visit_prior(const VisitRecord& visit, const ConditionalTable& table,
                              const PriorOptions& options) {
  if (visit.diagnoses.empty() || visit.procedures.empty()) {
    throw Error("build_visit_prior: visit " + std::to_string(visit.visit_id) +
                " has only one type of code; no attention targets");
  }
  PriorMatrix out;
  for (const auto& d : visit.diagnoses) {
    out.token_codes.push_back(d);
    out.token_types.push_back(options.diagnosis_type);
  }
  for (const auto& p : visit.procedures) {
    out.token_codes.push_back(p);
    out.token_types.push_back(options.procedure_type);
  }
  for (const auto& c : out.token_codes) {
    if (!table.knows(c)) throw Error("build_visit_prior: code '" + c + "' is not in the table");
  }
  const std::size_t n = out.token_codes.size();
  out.prior = num::DenseMatrix(n, n);
  out.mask = num::DenseMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t allowed = 0;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool forbidden = i == j || (options.forbid_same_type && out.token_types[i] == out.token_types[j]);
      if (forbidden) {
        out.mask(i, j) = num::kMaskForbidden;
        continue;
      }
      ++allowed;
      out.prior(i, j) = table.prob(out.token_codes[j], out.token_codes[i]);
      total += out.prior(i, j);
    }
    if (allowed == 0) throw Error("build_visit_prior: token '" + out.token_codes[i] + "' has no allowed targets");
    for (std::size_t j = 0; j < n; ++j) {
      if (out.mask(i, j) == num::kMaskForbidden) continue;
      out.prior(i, j) = total > 0.0 ? out.prior(i, j) / total : 1.0 / static_cast<double>(allowed);
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> codes) : codes_(std::move(codes)) {
  for (std::size_t i = 0; i < codes_.size(); ++i) {
    if (!index_.emplace(codes_[i], static_cast<long>(i)).second) {
      throw Error("Vocabulary: duplicate code '" + codes_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::from_graph(const kg::KnowledgeGraph& g) {
  std::vector<std::string> codes;
  for (const auto& n : g.nodes()) codes.push_back(n.code);
  return Vocabulary(std::move(codes));
}

long Vocabulary::index_of(const std::string& code) const {
  auto it = index_.find(code);
  if (it == index_.end()) throw Error("Vocabulary: unknown code '" + code + "'");
  return it->second;
}

std::size_t max_visit_tokens(const std::vector<VisitRecord>& visits) {
  std::size_t m = 0;
  for (const auto& v : visits) m = std::max(m, v.diagnoses.size() + v.procedures.size());
  return m;
}

std::vector<EncodedVisit> encode_batch(const std::vector<VisitRecord>& visits, const ConditionalTable& table,
                                       const Vocabulary& vocab, std::size_t max_tokens,
                                       const PriorOptions& options) {
  std::vector<EncodedVisit> out;
  out.reserve(visits.size());
  for (const auto& v : visits) {
    const std::size_t n = v.diagnoses.size() + v.procedures.size();
    if (n > max_tokens) {
      throw Error("encode_batch: visit " + std::to_string(v.visit_id) + " has " + std::to_string(n) +
                  " tokens, more than max_tokens " + std::to_string(max_tokens));
    }
    PriorMatrix unpadded = build_visit_prior(v, table, options);
    EncodedVisit e;
    e.visit_id = v.visit_id;
    e.label = v.label;
    e.n_tokens = n;
    e.n_diagnoses = v.diagnoses.size();
    e.prior.token_codes = unpadded.token_codes;
    e.prior.token_types = unpadded.token_types;
    e.prior.token_codes.resize(max_tokens);
    e.prior.token_types.resize(max_tokens);
    e.prior.prior = num::DenseMatrix(max_tokens, max_tokens);
    e.prior.mask = num::DenseMatrix(max_tokens, max_tokens, num::kMaskForbidden);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        e.prior.prior(i, j) = unpadded.prior(i, j);
        e.prior.mask(i, j) = unpadded.mask(i, j);
      }
    }
    for (std::size_t i = n; i < max_tokens; ++i) {
      e.prior.prior(i, i) = 1.0;
      e.prior.mask(i, i) = 0.0;
    }
    e.token_ids.assign(max_tokens, -1);
    e.valid.assign(max_tokens, false);
    for (std::size_t i = 0; i < n; ++i) {
      e.token_ids[i] = vocab.index_of(unpadded.token_codes[i]);
      e.valid[i] = true;
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> unpad(const EncodedVisit& encoded) {
  const auto& codes = encoded.prior.token_codes;
  return {{codes.begin(), codes.begin() + static_cast<std::ptrdiff_t>(encoded.n_diagnoses)},
          {codes.begin() + static_cast<std::ptrdiff_t>(encoded.n_diagnoses),
           codes.begin() + static_cast<std::ptrdiff_t>(encoded.n_tokens)}};
}

}  // namespace kgrt::cohort
