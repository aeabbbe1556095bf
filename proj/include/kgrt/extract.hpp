#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kgrt/cohort.hpp"
#include "kgrt/gct.hpp"
#include "kgrt/kg.hpp"
#include "kgrt/numerics.hpp"

namespace kgrt::extract {

// Attention read as a weighted token graph: weights(from, to) is the weight of
// stepping from token `from` to token `to`. Self-steps are always zero.
struct AttentionView {
  std::vector<std::string> tokens;
  std::vector<std::string> types;
  num::DenseMatrix weights;

  std::size_t index_of(const std::string& token) const;  // throws if absent
};

// Query row of an attention matrix becomes the "from" token.
inline constexpr const char* kOrientation = "from=query_row,to=key_column";

// Validates shape and non-negativity and zeroes the diagonal.
AttentionView make_view(std::vector<std::string> tokens, std::vector<std::string> types, num::DenseMatrix weights);

struct ExtractedTriple {
  std::string head;
  std::vector<std::string> via;  // intermediate tokens, empty for a direct step
  std::string tail;
  double match = 0.0;
  std::string relation;  // type-pair label when direct, otherwise the path
  friend bool operator==(const ExtractedTriple&, const ExtractedTriple&) = default;
};

// "path:" followed by the intermediate tokens joined with '>'.
std::string path_relation(const std::vector<std::string>& via);

// Greedy walk from head: each step goes to the heaviest unvisited token (ties
// to the lowest index), adding its weight to the match; the walk stops with a
// triple when it reaches the tail, and yields nothing after max_hops steps or
// when no unvisited token has positive weight.
std::optional<ExtractedTriple> extract_triple(const AttentionView& view, const std::string& head,
                                              const std::string& tail, std::size_t max_hops = 3);

// Tree search over steps with weight >= tau; each expansion keeps at most
// beam_width children (heaviest first). Returns every head->tail path found,
// sorted by match descending, then by path.
std::vector<ExtractedTriple> extract_threshold(const AttentionView& view, const std::string& head,
                                               const std::string& tail, double tau, std::size_t max_hops = 3,
                                               std::size_t beam_width = 4);

enum class Mode { greedy, threshold };
enum class Aggregation { max, mean, sum };

std::string to_string(Mode m);
std::string to_string(Aggregation a);
Mode parse_mode(const std::string& s);                // throws ConfigError
Aggregation parse_aggregation(const std::string& s);  // throws ConfigError

struct RecoverOptions {
  std::size_t layer = 0;  // 0 selects the last block
  Mode mode = Mode::greedy;
  double tau = 0.1;
  std::size_t max_hops = 3;
  std::size_t beam_width = 4;
  Aggregation aggregation = Aggregation::max;

  void validate() const;  // throws ConfigError
};

struct RecoveredTriple {
  ExtractedTriple best;  // highest-match path over all visits
  std::string head_type;
  std::string tail_type;
  double score = 0.0;    // aggregated match
  std::size_t support = 0;  // visits where a path was found
  friend bool operator==(const RecoveredTriple&, const RecoveredTriple&) = default;
};

struct RecoveredGraph {
  std::size_t layer = 0;  // resolved, 1-based
  RecoverOptions options;
  std::map<kg::EdgePair, RecoveredTriple> triples;
  friend bool operator==(const RecoveredGraph& a, const RecoveredGraph& b) {
    return a.layer == b.layer && a.triples == b.triples;
  }
};

AttentionView view_of_visit(const gct::GctModel& model, const cohort::EncodedVisit& visit, std::size_t layer);

// Extracts every ordered cross-type token pair of every visit and keeps one
// entry per (head, tail). Ties between equal-match paths go to the smaller
// relation string, so the result does not depend on visit order.
RecoveredGraph recover_graph(const gct::GctModel& model, const std::vector<cohort::EncodedVisit>& visits,
                             const RecoverOptions& options);

// KG JSONL with a leading `#meta` line; each triple also carries match,
// support and via. Loadable by kg::parse_kg.
std::string to_jsonl(const RecoveredGraph& g);
void save_recovered(const RecoveredGraph& g, const std::filesystem::path& path);
RecoveredGraph parse_recovered(std::istream& in, const std::string& source);
RecoveredGraph load_recovered(const std::filesystem::path& path);

}  // namespace kgrt::extract
