#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace kgrt::kg {

struct Node {
  std::string code;
  std::string type;
  friend auto operator<=>(const Node&, const Node&) = default;
};

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

using EdgePair = std::pair<std::string, std::string>;

const std::vector<std::string>& default_node_types();

// "<head_type>_to_<tail_type>"
std::string relation_label(const std::string& head_type, const std::string& tail_type);

// Typed nodes and directed labeled edges. Nodes are kept sorted by code;
// edges keep insertion order. The constructor enforces every invariant:
// unique non-empty type names, unique codes, known endpoint codes and types,
// no self-loops and no duplicate triples.
class KnowledgeGraph {
 public:
  KnowledgeGraph(std::vector<std::string> types, std::vector<Node> nodes, std::vector<Triple> edges);

  const std::vector<std::string>& types() const { return types_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Triple>& edges() const { return edges_; }

  bool contains(const std::string& code) const { return index_.contains(code); }
  const std::string& type_of(const std::string& code) const;
  std::vector<std::string> codes_of_type(const std::string& type) const;

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.types_ == b.types_ && a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  std::vector<std::string> types_;
  std::vector<Node> nodes_;
  std::vector<Triple> edges_;
  std::map<std::string, std::size_t> index_;
};

struct GeneratorOptions {
  // (type, node count) in schema order.
  std::vector<std::pair<std::string, std::size_t>> counts{{"diagnosis", 20}, {"procedure", 20}};
  double edge_density = 0.3;
  double bidirectional_fraction = 0.2;
};

// Each cross-type node pair is linked with probability edge_density, in a
// direction chosen by a fair coin; with probability bidirectional_fraction
// the reverse edge is added too. Throws Error if the result has no edges.
KnowledgeGraph generate_synthetic_kg(const GeneratorOptions& options, std::uint64_t seed);

// JSONL: an optional `#nodes [...]` header listing nodes that appear in no
// edge, then one {"head","relation","tail","head_type","tail_type"} object
// per line. Extra keys are ignored on load, `#meta` lines are skipped.
std::string to_jsonl(const KnowledgeGraph& g);
void save_kg(const KnowledgeGraph& g, const std::filesystem::path& path);
KnowledgeGraph parse_kg(std::istream& in, const std::string& source,
                        const std::vector<std::string>& types = default_node_types());
KnowledgeGraph load_kg(const std::filesystem::path& path,
                       const std::vector<std::string>& types = default_node_types());

// Distinct ordered (head, tail) pairs, ignoring relation multiplicity.
std::set<EdgePair> edge_set(const KnowledgeGraph& g);

}  // namespace kgrt::kg
