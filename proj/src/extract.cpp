#include "kgrt/extract.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "kgrt/error.hpp"

namespace kgrt::extract {

using json = nlohmann::ordered_json;

std::size_t AttentionView::index_of(const std::string& token) const {
  auto it = std::find(tokens.begin(), tokens.end(), token);
  if (it == tokens.end()) throw Error("attention view: unknown token '" + token + "'");
  return static_cast<std::size_t>(it - tokens.begin());
}

AttentionView make_view(std::vector<std::string> tokens, std::vector<std::string> types, num::DenseMatrix weights) {
  if (weights.rows() != tokens.size() || weights.cols() != tokens.size())
    throw ShapeError("attention view: weights " + weights.shape_string() + " for " + std::to_string(tokens.size()) +
                     " tokens");
  if (types.size() != tokens.size()) throw ShapeError("attention view: one type per token required");
  for (double w : weights.data())
    if (!std::isfinite(w) || w < 0.0) throw NumericError("attention view: weights must be finite and non-negative");
  for (std::size_t i = 0; i < tokens.size(); ++i) weights(i, i) = 0.0;
  return {std::move(tokens), std::move(types), std::move(weights)};
}

std::string path_relation(const std::vector<std::string>& via) {
  std::string out = "path:";
  for (std::size_t i = 0; i < via.size(); ++i) {
    if (i) out += '>';
    out += via[i];
  }
  return out;
}

namespace {

void check_endpoints(std::size_t h, std::size_t t, std::size_t max_hops) {
  if (h == t) throw Error("extraction: head and tail must differ");
  if (max_hops < 1) throw Error("extraction: max_hops must be >= 1");
}

ExtractedTriple make_triple(const AttentionView& view, const std::vector<std::size_t>& path, double match) {
  ExtractedTriple out;
  out.head = view.tokens[path.front()];
  out.tail = view.tokens[path.back()];
  for (std::size_t i = 1; i + 1 < path.size(); ++i) out.via.push_back(view.tokens[path[i]]);
  out.match = match;
  out.relation = out.via.empty() ? kg::relation_label(view.types[path.front()], view.types[path.back()])
                                 : path_relation(out.via);
  return out;
}

struct Search {
  const AttentionView& view;
  std::size_t tail;
  double tau;
  std::size_t max_hops;
  std::size_t beam_width;
  std::vector<std::size_t> path;
  std::vector<bool> visited;
  std::vector<std::pair<std::vector<std::size_t>, double>> found;

  void expand(double match) {
    const std::size_t from = path.back();
    std::vector<std::size_t> children;
    for (std::size_t to = 0; to < view.tokens.size(); ++to) {
      const double w = view.weights(from, to);
      if (!visited[to] && w > 0.0 && w >= tau) children.push_back(to);
    }
    std::stable_sort(children.begin(), children.end(),
                     [&](std::size_t a, std::size_t b) { return view.weights(from, a) > view.weights(from, b); });
    if (children.size() > beam_width) children.resize(beam_width);
    for (std::size_t to : children) {
      const double next = match + view.weights(from, to);
      path.push_back(to);
      if (to == tail) {
        found.emplace_back(path, next);
      } else if (path.size() - 1 < max_hops) {
        visited[to] = true;
        expand(next);
        visited[to] = false;
      }
      path.pop_back();
    }
  }
};

}  // namespace

std::optional<ExtractedTriple> extract_triple(const AttentionView& view, const std::string& head,
                                              const std::string& tail, std::size_t max_hops) {
  const std::size_t h = view.index_of(head);
  const std::size_t t = view.index_of(tail);
  check_endpoints(h, t, max_hops);
  std::vector<bool> visited(view.tokens.size(), false);
  std::vector<std::size_t> path{h};
  visited[h] = true;
  double match = 0.0;
  for (std::size_t hop = 0; hop < max_hops; ++hop) {
    const std::size_t from = path.back();
    std::size_t best = view.tokens.size();
    for (std::size_t to = 0; to < view.tokens.size(); ++to) {
      if (visited[to]) continue;
      if (best == view.tokens.size() || view.weights(from, to) > view.weights(from, best)) best = to;
    }
    if (best == view.tokens.size() || !(view.weights(from, best) > 0.0)) return std::nullopt;
    match += view.weights(from, best);
    path.push_back(best);
    if (best == t) return make_triple(view, path, match);
    visited[best] = true;
  }
  return std::nullopt;
}

std::vector<ExtractedTriple> extract_threshold(const AttentionView& view, const std::string& head,
                                               const std::string& tail, double tau, std::size_t max_hops,
                                               std::size_t beam_width) {
  const std::size_t h = view.index_of(head);
  const std::size_t t = view.index_of(tail);
  check_endpoints(h, t, max_hops);
  if (!(tau > 0.0 && tau < 1.0)) throw Error("extraction: threshold must lie in (0, 1)");
  if (beam_width < 1) throw Error("extraction: beam_width must be >= 1");
  Search search{view, t, tau, max_hops, beam_width, {h}, std::vector<bool>(view.tokens.size(), false), {}};
  search.visited[h] = true;
  search.expand(0.0);
  std::stable_sort(search.found.begin(), search.found.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<ExtractedTriple> out;
  for (const auto& [path, match] : search.found) out.push_back(make_triple(view, path, match));
  return out;
}

std::string to_string(Mode m) { return m == Mode::greedy ? "greedy" : "threshold"; }

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::max: return "max";
    case Aggregation::mean: return "mean";
    case Aggregation::sum: return "sum";
  }
  return "max";
}

Mode parse_mode(const std::string& s) {
  if (s == "greedy") return Mode::greedy;
  if (s == "threshold") return Mode::threshold;
  throw ConfigError("unknown extraction mode '" + s + "' (expected greedy or threshold)");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "max") return Aggregation::max;
  if (s == "mean") return Aggregation::mean;
  if (s == "sum") return Aggregation::sum;
  throw ConfigError("unknown aggregation '" + s + "' (expected max, mean or sum)");
}

void RecoverOptions::validate() const {
  if (max_hops < 1) throw ConfigError("extract.max_hops must be >= 1");
  if (beam_width < 1) throw ConfigError("extract.beam_width must be >= 1");
  if (mode == Mode::threshold && !(tau > 0.0 && tau < 1.0)) throw ConfigError("extract.tau must lie in (0, 1)");
}

AttentionView view_of_visit(const gct::GctModel& model, const cohort::EncodedVisit& visit, std::size_t layer) {
  const auto n = static_cast<std::ptrdiff_t>(visit.n_tokens);
  const auto& codes = visit.prior.token_codes;
  const auto& types = visit.prior.token_types;
  return make_view({codes.begin(), codes.begin() + n}, {types.begin(), types.begin() + n},
                   gct::attention_of_layer(model, visit, layer));
}

namespace {

bool better(const ExtractedTriple& a, const ExtractedTriple& b) {
  if (a.match != b.match) return a.match > b.match;
  return a.relation < b.relation;
}

}  // namespace

RecoveredGraph recover_graph(const gct::GctModel& model, const std::vector<cohort::EncodedVisit>& visits,
                             const RecoverOptions& options) {
  options.validate();
  RecoveredGraph out;
  out.options = options;
  out.layer = options.layer == 0 ? model.blocks.size() : options.layer;
  if (out.layer > model.blocks.size())
    throw Error("recover_graph: layer " + std::to_string(out.layer) + " out of range 1.." +
                std::to_string(model.blocks.size()));
  for (const auto& visit : visits) {
    const AttentionView view = view_of_visit(model, visit, out.layer);
    const std::size_t n = view.tokens.size();
    for (std::size_t h = 0; h < n; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        if (h == t || view.types[h] == view.types[t]) continue;
        std::optional<ExtractedTriple> found;
        if (options.mode == Mode::greedy) {
          found = extract_triple(view, view.tokens[h], view.tokens[t], options.max_hops);
        } else {
          auto all = extract_threshold(view, view.tokens[h], view.tokens[t], options.tau, options.max_hops,
                                       options.beam_width);
          if (!all.empty()) found = all.front();
        }
        if (!found) continue;
        auto [it, fresh] = out.triples.try_emplace({found->head, found->tail});
        RecoveredTriple& entry = it->second;
        if (fresh) {
          entry.best = *found;
          entry.head_type = view.types[h];
          entry.tail_type = view.types[t];
        } else if (better(*found, entry.best)) {
          entry.best = *found;
        }
        ++entry.support;
        entry.score += found->match;  // running sum, finalized below
      }
    }
  }
  for (auto& [key, entry] : out.triples) {
    switch (options.aggregation) {
      case Aggregation::max: entry.score = entry.best.match; break;
      case Aggregation::mean: entry.score /= static_cast<double>(entry.support); break;
      case Aggregation::sum: break;
    }
  }
  return out;
}

std::string to_jsonl(const RecoveredGraph& g) {
  std::ostringstream out;
  json meta{{"layer", g.layer},
            {"mode", to_string(g.options.mode)},
            {"tau", g.options.tau},
            {"max_hops", g.options.max_hops},
            {"beam_width", g.options.beam_width},
            {"aggregation", to_string(g.options.aggregation)},
            {"orientation", kOrientation}};
  out << "#meta " << meta.dump() << "\n";
  for (const auto& [key, t] : g.triples) {
    json line{{"head", t.best.head},         {"relation", t.best.relation},
              {"tail", t.best.tail},         {"head_type", t.head_type},
              {"tail_type", t.tail_type},    {"match", t.score},
              {"path_match", t.best.match},
              {"support", t.support},        {"via", t.best.via}};
    out << line.dump() << "\n";
  }
  return out.str();
}

void save_recovered(const RecoveredGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_jsonl(g);
  if (!out) throw Error("failed writing " + path.string());
}

RecoveredGraph parse_recovered(std::istream& in, const std::string& source) {
  RecoveredGraph g;
  std::string line;
  std::size_t line_no = 0;
  bool saw_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      if (line.rfind("#meta ", 0) == 0) {
        const json meta = json::parse(line.substr(6));
        g.layer = meta.at("layer").get<std::size_t>();
        g.options.layer = g.layer;
        g.options.mode = parse_mode(meta.at("mode").get<std::string>());
        g.options.tau = meta.at("tau").get<double>();
        g.options.max_hops = meta.at("max_hops").get<std::size_t>();
        g.options.beam_width = meta.at("beam_width").get<std::size_t>();
        g.options.aggregation = parse_aggregation(meta.at("aggregation").get<std::string>());
        saw_meta = true;
        continue;
      }
      if (line[0] == '#') continue;
      const json obj = json::parse(line);
      RecoveredTriple t;
      t.best.head = obj.at("head").get<std::string>();
      t.best.tail = obj.at("tail").get<std::string>();
      t.best.relation = obj.at("relation").get<std::string>();
      t.best.via = obj.at("via").get<std::vector<std::string>>();
      t.best.match = obj.at("path_match").get<double>();
      t.head_type = obj.at("head_type").get<std::string>();
      t.tail_type = obj.at("tail_type").get<std::string>();
      t.score = obj.at("match").get<double>();
      t.support = obj.at("support").get<std::size_t>();
      if (t.best.head == t.best.tail) throw Error("head equals tail");
      if (!(t.score >= 0.0)) throw Error("match must be non-negative");
      if (!g.triples.try_emplace({t.best.head, t.best.tail}, t).second) throw Error("duplicate (head, tail) pair");
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  if (!saw_meta) throw ParseError(source, line_no, "missing #meta line");
  return g;
}

RecoveredGraph load_recovered(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return parse_recovered(in, path.string());
}

}  // namespace kgrt::extract
