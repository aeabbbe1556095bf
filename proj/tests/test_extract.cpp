#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gct_instances.hpp"
#include "kgrt/error.hpp"
#include "kgrt/extract.hpp"
#include "oracles.hpp"

namespace ex = kgrt::extract;
namespace gct = kgrt::gct;
using kgrt::Rng;
using kgrt::num::DenseMatrix;
using kgrt::testing::make_world;
using kgrt::testing::prior_argmax_pairs;
using kgrt::testing::replay_greedy;

namespace {

ex::AttentionView sentence_view() {
  // Sam, is, a, footballer; weights read off the example matrix.
  auto w = DenseMatrix::from_rows({{0.0, 0.4, 0.1, 0.2},  //
                                   {0.0, 0.0, 0.2, 0.5},
                                   {0.0, 0.0, 0.0, 0.1},
                                   {0.0, 0.0, 0.0, 0.0}});
  return ex::make_view({"Sam", "is", "a", "footballer"}, {"entity", "word", "word", "entity"}, w);
}

std::vector<std::string> type_list(std::size_t n) {
  std::vector<std::string> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(i % 2 ? "procedure" : "diagnosis");
  return t;
}

std::vector<std::string> token_list(std::size_t n) {
  std::vector<std::string> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back("t" + std::to_string(i));
  return t;
}

// Random non-negative view; a coarse grid makes ties frequent.
ex::AttentionView random_view(Rng& rng, std::size_t n) {
  DenseMatrix w(n, n);
  const bool coarse = rng.bernoulli(0.5);
  for (double& x : w.data()) {
    const double u = rng.uniform01();
    x = coarse ? std::floor(u * 4.0) / 4.0 : (rng.bernoulli(0.15) ? 0.0 : u);
  }
  return ex::make_view(token_list(n), type_list(n), w);
}

std::vector<std::size_t> path_indices(const ex::AttentionView& v, const ex::ExtractedTriple& t) {
  std::vector<std::size_t> p{v.index_of(t.head)};
  for (const auto& x : t.via) p.push_back(v.index_of(x));
  p.push_back(v.index_of(t.tail));
  return p;
}

double path_weight(const ex::AttentionView& v, const std::vector<std::size_t>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) s += v.weights(p[i], p[i + 1]);
  return s;
}

// Every simple head->tail path with at most max_hops steps, each step >= tau.
void all_paths(const ex::AttentionView& v, std::vector<std::size_t>& path, std::size_t t, double tau,
               std::size_t max_hops, std::set<std::vector<std::size_t>>& out) {
  if (path.size() - 1 == max_hops) return;
  for (std::size_t j = 0; j < v.tokens.size(); ++j) {
    if (std::find(path.begin(), path.end(), j) != path.end()) continue;
    const double w = v.weights(path.back(), j);
    if (!(w > 0.0) || w < tau) continue;
    path.push_back(j);
    if (j == t)
      out.insert(path);
    else
      all_paths(v, path, t, tau, max_hops, out);
    path.pop_back();
  }
}

}  // namespace

TEST_CASE("sentence example: Sam is a footballer") {
  const auto view = sentence_view();
  auto t = ex::extract_triple(view, "Sam", "footballer");
  REQUIRE(t.has_value());
  CHECK(t->head == "Sam");
  CHECK(t->via == std::vector<std::string>{"is"});
  CHECK(t->tail == "footballer");
  CHECK(std::abs(t->match - 0.9) <= 1e-12);
  CHECK(t->relation == "path:is");

  // With one hop the walk stops at "is" and yields nothing.
  CHECK_FALSE(ex::extract_triple(view, "Sam", "footballer", 1).has_value());
  CHECK_THROWS_AS(ex::extract_triple(view, "Sam", "Bob"), kgrt::Error);
  CHECK_THROWS_AS(ex::extract_triple(view, "Sam", "Sam"), kgrt::Error);
  CHECK_THROWS_AS(ex::extract_triple(view, "Sam", "is", 0), kgrt::Error);
}

TEST_CASE("direct two-token step") {
  auto view = ex::make_view({"h", "t"}, {"diagnosis", "procedure"}, DenseMatrix::from_rows({{0.0, 1.0}, {1.0, 0.0}}));
  auto t = ex::extract_triple(view, "h", "t");
  REQUIRE(t.has_value());
  CHECK(t->via.empty());
  CHECK(t->match == 1.0);
  CHECK(t->relation == "diagnosis_to_procedure");
}

TEST_CASE("make_view validation") {
  CHECK_THROWS_AS(ex::make_view({"a"}, {"x"}, DenseMatrix(2, 2)), kgrt::ShapeError);
  CHECK_THROWS_AS(ex::make_view({"a", "b"}, {"x", "y"}, DenseMatrix::from_rows({{0, -0.1}, {0, 0}})),
                  kgrt::NumericError);
  auto v = ex::make_view({"a", "b"}, {"x", "y"}, DenseMatrix::from_rows({{0.7, 0.3}, {0.5, 0.5}}));
  CHECK(v.weights(0, 0) == 0.0);
  CHECK(v.weights(1, 1) == 0.0);
}

TEST_CASE("greedy extraction equals the step-replay oracle") {
  Rng rng(31);
  std::size_t found = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 4 + rng.below(3);
    const auto view = random_view(rng, n);
    const std::size_t h = rng.below(n);
    std::size_t t = rng.below(n - 1);
    if (t >= h) ++t;
    const std::size_t hops = 1 + rng.below(4);
    auto got = ex::extract_triple(view, view.tokens[h], view.tokens[t], hops);
    auto want = replay_greedy(view, h, t, hops);
    REQUIRE(got.has_value() == want.has_value());
    if (!got) continue;
    ++found;
    const auto path = path_indices(view, *got);
    CHECK(path == *want);
    CHECK(got->match == path_weight(view, path));
    CHECK(path.size() - 1 <= hops);
  }
  CHECK(found > 200);
}

TEST_CASE("threshold search equals brute-force enumeration with an unbounded beam") {
  Rng rng(32);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 3 + rng.below(4);
    const auto view = random_view(rng, n);
    const double tau = 0.05 + 0.5 * rng.uniform01();
    const std::size_t hops = 1 + rng.below(4);
    const std::size_t h = rng.below(n);
    std::size_t t = rng.below(n - 1);
    if (t >= h) ++t;
    auto got = ex::extract_threshold(view, view.tokens[h], view.tokens[t], tau, hops, n);
    std::set<std::vector<std::size_t>> want;
    std::vector<std::size_t> start{h};
    all_paths(view, start, t, tau, hops, want);
    std::set<std::vector<std::size_t>> got_paths;
    for (const auto& e : got) {
      got_paths.insert(path_indices(view, e));
      CHECK(e.match == path_weight(view, path_indices(view, e)));
    }
    CHECK(got_paths == want);
    CHECK(got.size() == want.size());
    for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i - 1].match >= got[i].match);
  }
}

TEST_CASE("threshold examples") {
  const auto view = sentence_view();
  auto paths = ex::extract_threshold(view, "Sam", "footballer", 0.15);
  REQUIRE(paths.size() == 2);
  CHECK(paths[0].via == std::vector<std::string>{"is"});
  CHECK(std::abs(paths[0].match - 0.9) <= 1e-12);
  CHECK(paths[1].via.empty());
  CHECK(paths[1].match == 0.2);

  CHECK(ex::extract_threshold(view, "Sam", "footballer", 0.51).empty());
  // Just below the global maximum (0.5) no first step from Sam qualifies,
  // so the threshold variant finds nothing even though greedy succeeds.
  CHECK(ex::extract_threshold(view, "Sam", "footballer", 0.49).empty());

  // tau -> 0 with an unbounded beam on 3 tokens: every simple path.
  auto three = ex::make_view({"a", "b", "c"}, {"x", "y", "x"},
                             DenseMatrix::from_rows({{0, 0.5, 0.5}, {0.5, 0, 0.5}, {0.5, 0.5, 0}}));
  auto all = ex::extract_threshold(three, "a", "c", 1e-9, 3, 3);
  REQUIRE(all.size() == 2);
  CHECK(all[0].via == std::vector<std::string>{"b"});
  CHECK(all[1].via.empty());

  CHECK_THROWS_AS(ex::extract_threshold(view, "Sam", "footballer", 0.0), kgrt::Error);
  CHECK_THROWS_AS(ex::extract_threshold(view, "Sam", "footballer", 0.5, 3, 0), kgrt::Error);
}

TEST_CASE("threshold dominance over greedy") {
  Rng rng(33);
  std::size_t checked = 0;
  for (int trial = 0; trial < 600; ++trial) {
    const std::size_t n = 4 + rng.below(3);
    const auto view = random_view(rng, n);
    const std::size_t h = rng.below(n);
    std::size_t t = rng.below(n - 1);
    if (t >= h) ++t;
    auto greedy = ex::extract_triple(view, view.tokens[h], view.tokens[t], 3);
    if (!greedy) continue;
    const auto path = path_indices(view, *greedy);
    double min_step = 1.0;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) min_step = std::min(min_step, view.weights(path[i], path[i + 1]));
    const double tau = std::min(min_step, 0.999) * rng.uniform(0.01, 1.0);
    const std::size_t beam = 1 + rng.below(4);
    auto paths = ex::extract_threshold(view, view.tokens[h], view.tokens[t], tau, 3, beam);
    CHECK(std::find(paths.begin(), paths.end(), *greedy) != paths.end());
    ++checked;
  }
  CHECK(checked >= 200);
}

TEST_CASE("mode and aggregation parsing") {
  CHECK(ex::parse_mode("threshold") == ex::Mode::threshold);
  CHECK(ex::parse_aggregation("mean") == ex::Aggregation::mean);
  CHECK_THROWS_AS(ex::parse_mode("beam"), kgrt::ConfigError);
  CHECK_THROWS_AS(ex::parse_aggregation("median"), kgrt::ConfigError);
  ex::RecoverOptions o;
  o.mode = ex::Mode::threshold;
  o.tau = 1.0;
  CHECK_THROWS_AS(o.validate(), kgrt::ConfigError);
}

namespace {

std::set<kgrt::kg::EdgePair> keys(const ex::RecoveredGraph& g) {
  std::set<kgrt::kg::EdgePair> out;
  for (const auto& [k, v] : g.triples) out.insert(k);
  return out;
}

}  // namespace

TEST_CASE("layer 1 on single-diagnosis visits reproduces the prior's argmaxes") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto world = make_world(4 + seed % 5, 4 + seed % 7, 30, 500 + seed, 0.4, 1);
    auto model = gct::init_model(gct::GctConfig{}, world.vocab);
    ex::RecoverOptions o;
    o.layer = 1;
    auto g = ex::recover_graph(model, world.encoded, o);
    CHECK(keys(g) == prior_argmax_pairs(world.encoded));
    for (const auto& [k, t] : g.triples) {
      CHECK(t.best.via.empty());
      CHECK(t.best.relation == kgrt::kg::relation_label(t.head_type, t.tail_type));
    }
  }
}

TEST_CASE("recover_graph basics") {
  auto world = make_world(8, 8, 80, 40);
  gct::GctConfig config;
  config.steps = 60;
  config.eval_every = 20;
  auto model = gct::train(gct::init_model(config, world.vocab), world.encoded, config).model;

  ex::RecoverOptions o;
  CHECK(ex::recover_graph(model, {}, o).triples.empty());
  auto a = ex::recover_graph(model, world.encoded, o);
  auto b = ex::recover_graph(model, world.encoded, o);
  CHECK(a.layer == 3);
  CHECK(a == b);
  CHECK(ex::to_jsonl(a) == ex::to_jsonl(b));

  // Aggregation is independent of visit order.
  auto reversed = world.encoded;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(ex::recover_graph(model, reversed, o) == a);

  o.layer = 4;
  CHECK_THROWS_AS(ex::recover_graph(model, world.encoded, o), kgrt::Error);
  o.layer = 0;

  for (const auto& [k, t] : a.triples) {
    CHECK(t.head_type != t.tail_type);
    CHECK(t.score == t.best.match);
    CHECK(t.support >= 1);
  }

  auto mean_opts = o;
  mean_opts.aggregation = ex::Aggregation::mean;
  auto sum_opts = o;
  sum_opts.aggregation = ex::Aggregation::sum;
  auto mean = ex::recover_graph(model, world.encoded, mean_opts);
  auto sum = ex::recover_graph(model, world.encoded, sum_opts);
  CHECK(keys(mean) == keys(a));
  for (const auto& [k, t] : a.triples) {
    CHECK(mean.triples.at(k).score <= t.score + 1e-12);
    CHECK(sum.triples.at(k).score >= t.score - 1e-12);
    CHECK(mean.triples.at(k).score == doctest::Approx(sum.triples.at(k).score / t.support).epsilon(1e-12));
  }

  // Threshold mode with tau above every weight recovers nothing.
  auto thr = o;
  thr.mode = ex::Mode::threshold;
  thr.tau = 0.999999;
  CHECK(ex::recover_graph(model, world.encoded, thr).triples.size() <= a.triples.size());
}

TEST_CASE("recovered graph JSONL round trip") {
  auto world = make_world(6, 6, 60, 41);
  auto model = gct::init_model(gct::GctConfig{}, world.vocab);
  ex::RecoverOptions o;
  o.aggregation = ex::Aggregation::mean;
  auto g = ex::recover_graph(model, world.encoded, o);
  const std::string text = ex::to_jsonl(g);
  CHECK(text.rfind("#meta ", 0) == 0);
  std::istringstream in(text);
  auto back = ex::parse_recovered(in, "mem");
  CHECK(back == g);
  CHECK(back.options.aggregation == ex::Aggregation::mean);
  CHECK(ex::to_jsonl(back) == text);

  // The same file is a valid knowledge graph.
  std::istringstream again(text);
  auto as_kg = kgrt::kg::parse_kg(again, "mem");
  CHECK(as_kg.edges().size() == g.triples.size());

  std::istringstream missing("{\"head\":\"a\"}\n");
  CHECK_THROWS_AS(ex::parse_recovered(missing, "mem"), kgrt::ParseError);
}
