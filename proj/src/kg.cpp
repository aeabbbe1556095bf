#include "kgrt/kg.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kgrt/error.hpp"
#include "kgrt/rng.hpp"

namespace kgrt::kg {

using ordered_json = nlohmann::ordered_json;

const std::vector<std::string>& default_node_types() {
  static const std::vector<std::string> types{"diagnosis", "procedure"};
  return types;
}

std::string relation_label(const std::string& head_type, const std::string& tail_type) {
  return head_type + "_to_" + tail_type;
}

KnowledgeGraph::KnowledgeGraph(std::vector<std::string> types, std::vector<Node> nodes,
                               std::vector<Triple> edges)
    : types_(std::move(types)), nodes_(std::move(nodes)), edges_(std::move(edges)) {
  std::set<std::string> type_set;
  for (const auto& t : types_) {
    if (t.empty()) throw Error("knowledge graph: empty node type name");
    if (!type_set.insert(t).second) throw Error("knowledge graph: duplicate node type '" + t + "'");
  }
  std::sort(nodes_.begin(), nodes_.end());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.code.empty()) throw Error("knowledge graph: empty node code");
    if (!type_set.contains(n.type)) {
      throw Error("knowledge graph: node '" + n.code + "' has unknown type '" + n.type + "'");
    }
    if (!index_.emplace(n.code, i).second) throw Error("knowledge graph: duplicate node '" + n.code + "'");
  }
  std::set<Triple> seen;
  for (const Triple& e : edges_) {
    if (!contains(e.head) || !contains(e.tail)) {
      throw Error("knowledge graph: edge (" + e.head + ", " + e.relation + ", " + e.tail +
                  ") references an unknown node");
    }
    if (e.head == e.tail) throw Error("knowledge graph: self-loop on '" + e.head + "'");
    if (e.relation.empty()) throw Error("knowledge graph: empty relation label");
    if (!seen.insert(e).second) {
      throw Error("knowledge graph: duplicate triple (" + e.head + ", " + e.relation + ", " + e.tail + ")");
    }
  }
}

const std::string& KnowledgeGraph::type_of(const std::string& code) const {
  auto it = index_.find(code);
  if (it == index_.end()) throw Error("knowledge graph: unknown node '" + code + "'");
  return nodes_[it->second].type;
}

std::vector<std::string> KnowledgeGraph::codes_of_type(const std::string& type) const {
  std::vector<std::string> out;
  for (const Node& n : nodes_)
    if (n.type == type) out.push_back(n.code);
  return out;
}

KnowledgeGraph generate_synthetic_kg(const GeneratorOptions& options, std::uint64_t seed) {
  if (options.counts.size() < 2) throw Error("generate_synthetic_kg: need at least two node types");
  if (!(options.edge_density > 0.0 && options.edge_density <= 1.0)) {
    throw Error("generate_synthetic_kg: edge_density must be in (0, 1]");
  }
  if (!(options.bidirectional_fraction >= 0.0 && options.bidirectional_fraction <= 1.0)) {
    throw Error("generate_synthetic_kg: bidirectional_fraction must be in [0, 1]");
  }

  std::vector<std::string> types;
  std::vector<std::vector<std::string>> codes;
  std::vector<Node> nodes;
  for (const auto& [type, count] : options.counts) {
    if (count < 1) throw Error("generate_synthetic_kg: type '" + type + "' needs at least one node");
    const std::size_t width = std::to_string(count - 1).size();
    types.push_back(type);
    codes.emplace_back();
    for (std::size_t i = 0; i < count; ++i) {
      std::string idx = std::to_string(i);
      std::string code = type + "_" + std::string(width - idx.size(), '0') + idx;
      codes.back().push_back(code);
      nodes.push_back({code, type});
    }
  }

  Rng rng(seed);
  std::vector<Triple> edges;
  for (std::size_t ta = 0; ta < types.size(); ++ta) {
    for (std::size_t tb = ta + 1; tb < types.size(); ++tb) {
      const std::string forward = relation_label(types[ta], types[tb]);
      const std::string backward = relation_label(types[tb], types[ta]);
      for (const auto& a : codes[ta]) {
        for (const auto& b : codes[tb]) {
          // Three draws per pair regardless of outcome keeps the stream aligned.
          const bool linked = rng.bernoulli(options.edge_density);
          const bool a_first = rng.bernoulli(0.5);
          const bool both = rng.bernoulli(options.bidirectional_fraction);
          if (!linked) continue;
          if (a_first) edges.push_back({a, forward, b});
          else edges.push_back({b, backward, a});
          if (both) {
            if (a_first) edges.push_back({b, backward, a});
            else edges.push_back({a, forward, b});
          }
        }
      }
    }
  }
  if (edges.empty()) throw Error("generate_synthetic_kg: no edges generated; round trip is undefined");
  return KnowledgeGraph(std::move(types), std::move(nodes), std::move(edges));
}

std::string to_jsonl(const KnowledgeGraph& g) {
  std::set<std::string> in_edges;
  for (const Triple& e : g.edges()) {
    in_edges.insert(e.head);
    in_edges.insert(e.tail);
  }
  std::ostringstream out;
  ordered_json isolated = ordered_json::array();
  for (const Node& n : g.nodes()) {
    if (!in_edges.contains(n.code)) isolated.push_back(ordered_json{{"code", n.code}, {"type", n.type}});
  }
  if (!isolated.empty()) out << "#nodes " << isolated.dump() << '\n';
  for (const Triple& e : g.edges()) {
    ordered_json line{{"head", e.head},
                      {"relation", e.relation},
                      {"tail", e.tail},
                      {"head_type", g.type_of(e.head)},
                      {"tail_type", g.type_of(e.tail)}};
    out << line.dump() << '\n';
  }
  return out.str();
}

void save_kg(const KnowledgeGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_kg: cannot open " + path.string() + " for writing");
  out << to_jsonl(g);
  if (!out) throw Error("save_kg: write failed for " + path.string());
}

namespace {

std::string require_string(const ordered_json& obj, const char* key, const std::string& source,
                           std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError(source, line, std::string("missing or non-string key '") + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

KnowledgeGraph parse_kg(std::istream& in, const std::string& source,
                        const std::vector<std::string>& types) {
  const std::set<std::string> allowed(types.begin(), types.end());
  std::map<std::string, std::string> node_types;
  std::vector<Triple> edges;

  auto declare = [&](const std::string& code, const std::string& type, std::size_t line) {
    if (code.empty()) throw ParseError(source, line, "empty node code");
    if (!allowed.contains(type)) throw ParseError(source, line, "unknown node type '" + type + "'");
    auto [it, inserted] = node_types.emplace(code, type);
    if (!inserted && it->second != type) {
      throw ParseError(source, line, "node '" + code + "' declared with types '" + it->second +
                                         "' and '" + type + "'");
    }
  };

  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    if (text.rfind("#meta", 0) == 0) continue;
    if (text.rfind("#nodes", 0) == 0) {
      ordered_json listed = ordered_json::parse(text.substr(6), nullptr, false);
      if (listed.is_discarded() || !listed.is_array()) {
        throw ParseError(source, line_no, "malformed #nodes header");
      }
      for (const auto& n : listed) {
        if (!n.is_object()) throw ParseError(source, line_no, "malformed #nodes entry");
        declare(require_string(n, "code", source, line_no), require_string(n, "type", source, line_no), line_no);
      }
      continue;
    }
    ordered_json obj = ordered_json::parse(text, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) throw ParseError(source, line_no, "malformed line");
    Triple e{require_string(obj, "head", source, line_no), require_string(obj, "relation", source, line_no),
             require_string(obj, "tail", source, line_no)};
    declare(e.head, require_string(obj, "head_type", source, line_no), line_no);
    declare(e.tail, require_string(obj, "tail_type", source, line_no), line_no);
    edges.push_back(std::move(e));
  }

  std::vector<Node> nodes;
  for (const auto& [code, type] : node_types) nodes.push_back({code, type});
  try {
    return KnowledgeGraph(types, std::move(nodes), std::move(edges));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(source, line_no, e.what());
  }
}

KnowledgeGraph load_kg(const std::filesystem::path& path, const std::vector<std::string>& types) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_kg: cannot open " + path.string());
  return parse_kg(in, path.string(), types);
}

std::set<EdgePair> edge_set(const KnowledgeGraph& g) {
  std::set<EdgePair> out;
  for (const Triple& e : g.edges()) out.emplace(e.head, e.tail);
  return out;
}

}  // namespace kgrt::kg
