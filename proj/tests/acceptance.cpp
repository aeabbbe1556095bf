// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gct_instances.hpp"
#include "kgrt/config.hpp"
#include "kgrt/eval.hpp"
#include "kgrt/extract.hpp"
#include "kgrt/pipeline.hpp"
#include "metric_oracles.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
namespace ex = kgrt::extract;
namespace ev = kgrt::eval;
namespace pl = kgrt::pipeline;
using kgrt::Rng;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double x, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Verdict& v) {
  if (!v.pass) ++failures;
  std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << v.detail << std::endl;
}

Verdict guarded(const std::function<Verdict()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Verdict gradient_check() {
  const auto start = Clock::now();
  Rng rng(20240501);
  std::size_t compared = 0, skipped = 0, failed = 0;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto inst = kgrt::testing::random_grad_instance(rng, 8, 3);
    for (auto mode : {kgrt::gct::LossMode::original, kgrt::gct::LossMode::modified}) {
      const auto c = kgrt::testing::check_gradients(inst, mode);
      compared += c.compared;
      skipped += c.skipped_kinks;
      failed += c.failures;
      worst = std::max(worst, c.worst_relative_error);
    }
  }
  const double secs = seconds_since(start);
  return {failed == 0 && secs < 120.0,
          "100 instances x 2 losses, " + std::to_string(compared) + " coordinates compared, " +
              std::to_string(skipped) + " ReLU-kink coordinates skipped, worst rel. error " + fmt(worst) + ", " +
              fmt(secs, "%.1f") + " s"};
}

Verdict sentence_golden() {
  auto w = kgrt::num::DenseMatrix::from_rows(
      {{0.0, 0.4, 0.1, 0.2}, {0.0, 0.0, 0.2, 0.5}, {0.0, 0.0, 0.0, 0.1}, {0.0, 0.0, 0.0, 0.0}});
  auto view = ex::make_view({"Sam", "is", "a", "footballer"}, {"entity", "word", "word", "entity"}, w);
  auto t = ex::extract_triple(view, "Sam", "footballer");
  if (!t) return {false, "no triple extracted"};
  const bool ok = t->head == "Sam" && t->via == std::vector<std::string>{"is"} && t->tail == "footballer" &&
                  std::abs(t->match - 0.9) <= 1e-12;
  return {ok, "(" + t->head + ", [" + (t->via.empty() ? "" : t->via[0]) + "], " + t->tail + ") match " +
                  fmt(t->match, "%.17g")};
}

Verdict oracle_equivalence() {
  // Conditional table vs recount on 1000-visit cohorts.
  std::size_t table_mismatch = 0, cohorts = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    kgrt::kg::GeneratorOptions o;
    const auto g = kgrt::kg::generate_synthetic_kg(o, seed);
    kgrt::cohort::CohortOptions co;
    co.n_visits = 1000;
    const auto visits = kgrt::cohort::sample_cohort(g, co, seed * 7919);
    const auto table = kgrt::cohort::count_cooccurrence(visits);
    const auto counts = kgrt::testing::brute_force_counts(visits);
    if (table.counts() != counts) ++table_mismatch;
    for (const auto& [key, p] : kgrt::testing::brute_force_probs(counts))
      if (table.prob(key.second, key.first) != p) ++table_mismatch;
    ++cohorts;
  }

  // AUCs vs brute force on 1000 random instances.
  std::size_t roc_mismatch = 0, pr_mismatch = 0;
  Rng rng(77);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 1000; ++i) {
    kgrt::testing::random_scored(rng, s, y);
    if (ev::auc_roc(s, y) != kgrt::testing::auc_roc_pairs(s, y)) ++roc_mismatch;
    if (std::abs(ev::auc_pr(s, y) - kgrt::testing::auc_pr_curve(s, y)) > 1e-15) ++pr_mismatch;
  }

  // Greedy extraction vs step replay on random 4-6 token views.
  std::size_t greedy_mismatch = 0, views = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 4 + rng.below(3);
    kgrt::num::DenseMatrix w(n, n);
    const bool coarse = rng.bernoulli(0.5);
    for (double& x : w.data()) x = coarse ? std::floor(rng.uniform01() * 4.0) / 4.0 : rng.uniform01();
    std::vector<std::string> tokens, types;
    for (std::size_t k = 0; k < n; ++k) {
      tokens.push_back("t" + std::to_string(k));
      types.push_back(k % 2 ? "procedure" : "diagnosis");
    }
    const auto view = ex::make_view(tokens, types, w);
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t t = 0; t < n; ++t) {
        if (h == t) continue;
        ++views;
        const auto got = ex::extract_triple(view, tokens[h], tokens[t], 3);
        const auto want = kgrt::testing::replay_greedy(view, h, t, 3);
        if (got.has_value() != want.has_value()) {
          ++greedy_mismatch;
          continue;
        }
        if (!got) continue;
        std::vector<std::size_t> path{h};
        for (const auto& v : got->via) path.push_back(view.index_of(v));
        path.push_back(t);
        double sum = 0.0;
        for (std::size_t k = 0; k + 1 < path.size(); ++k) sum += view.weights(path[k], path[k + 1]);
        if (path != *want || sum != got->match) ++greedy_mismatch;
      }
  }
  const bool ok = table_mismatch == 0 && roc_mismatch == 0 && pr_mismatch == 0 && greedy_mismatch == 0;
  return {ok, "table mismatches " + std::to_string(table_mismatch) + "/" + std::to_string(cohorts) +
                  " cohorts of 1000 visits; AUC-ROC mismatches " + std::to_string(roc_mismatch) +
                  "/1000, AUC-PR mismatches " + std::to_string(pr_mismatch) + "/1000; greedy mismatches " +
                  std::to_string(greedy_mismatch) + "/" + std::to_string(views) + " head-tail queries"};
}

// ---------------------------------------------------------------------------

struct ReferenceRun {
  pl::RoundtripResult result;
  pl::Dataset dataset;
  double seconds = 0.0;
};

ReferenceRun run_reference(const kgrt::config::RunConfig& c, const fs::path& out) {
  std::ostringstream log;
  const auto start = Clock::now();
  ReferenceRun r{pl::run_roundtrip(c, out, log), pl::generate_dataset(c), 0.0};
  r.seconds = seconds_since(start);
  return r;
}

Verdict loss_finding(const ReferenceRun& r) {
  const auto& c = r.result.comparison;
  const double ratio = c.mean_loss_modified / c.mean_loss_original;
  const bool ok = c.mean_loss_modified < 0.25 * c.mean_loss_original && r.seconds < 600.0 &&
                  r.result.original.rows.size() == 20 && r.result.original.rows.front().step == 100;
  return {ok, "mean loss over steps 100-2000: modified " + fmt(c.mean_loss_modified) + ", original " +
                  fmt(c.mean_loss_original) + ", ratio " + fmt(ratio) + " (bound 0.25; below 0.10: " +
                  (ratio < 0.10 ? "yes" : "no") + "); roundtrip " + fmt(r.seconds, "%.1f") + " s"};
}

Verdict auc_finding(const ReferenceRun& r) {
  const auto& c = r.result.comparison;
  const bool in_band = c.mean_auc_roc_modified >= 0.2 && c.mean_auc_roc_modified <= 0.6;
  double lo = 1.0, hi = 0.0;
  for (const auto& row : r.result.modified.rows) {
    lo = std::min(lo, row.auc_roc);
    hi = std::max(hi, row.auc_roc);
  }
  return {c.mean_auc_roc_modified < c.mean_auc_roc_original,
          "mean AUC-ROC modified " + fmt(c.mean_auc_roc_modified) + " < original " + fmt(c.mean_auc_roc_original) +
              "; modified range [" + fmt(lo, "%.3f") + ", " + fmt(hi, "%.3f") + "], mean in [0.2, 0.6] band: " +
              (in_band ? "yes" : "no") + " (reported only)"};
}

Verdict semantic_loss(const ReferenceRun& r) {
  const auto& truth = r.dataset.graph;
  const auto true_pairs = kgrt::kg::edge_set(truth);
  const auto argmax = kgrt::testing::prior_argmax_pairs(r.dataset.encoded);
  std::size_t covered = 0;
  for (const auto& p : true_pairs) covered += argmax.contains(p) ? 1 : 0;
  const double coverage = static_cast<double>(covered) / static_cast<double>(true_pairs.size());
  const auto& last = r.result.score_modified;
  const bool ok = last.relation_accuracy < 1.0 && r.result.score_prior.edge_recall >= coverage;
  return {ok, "layer " + std::to_string(r.result.recovered_modified.layer) + " (modified) relation_accuracy " +
                  fmt(last.relation_accuracy) + " (original " + fmt(r.result.score_original.relation_accuracy) +
                  "), edge_f1 " + fmt(last.edge_f1) + "; layer 1 edge_recall " +
                  fmt(r.result.score_prior.edge_recall) + " >= prior argmax coverage " + fmt(coverage)};
}

Verdict determinism(const kgrt::config::RunConfig& c, const fs::path& first, const fs::path& second) {
  std::ostringstream log;
  pl::run_roundtrip(c, second, log);
  std::vector<std::string> files{"original/report.csv", "modified/report.csv"};
  for (const std::string which : {"prior", "original", "modified"}) files.push_back(pl::recovered_file(which));
  std::size_t identical = 0;
  std::string differing;
  for (const auto& f : files) {
    if (slurp(first / f) == slurp(second / f))
      ++identical;
    else
      differing += " " + f;
  }
  return {identical == files.size(), std::to_string(identical) + "/" + std::to_string(files.size()) +
                                         " report and recovered-graph files byte-identical across reruns" +
                                         (differing.empty() ? "" : "; differing:" + differing)};
}

Verdict invariant_suite() {
  const auto start = Clock::now();
  std::string failed;
  std::size_t ran = 0;
  std::istringstream binaries(KGRT_UNIT_TESTS);
  std::string bin;
  while (std::getline(binaries, bin, '|')) {
    if (bin.empty()) continue;
    ++ran;
    const std::string cmd = "\"" + bin + "\" --minimal > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) failed += " " + fs::path(bin).filename().string();
  }
  const double secs = seconds_since(start);
  return {failed.empty() && ran > 0 && secs < 300.0,
          std::to_string(ran) + " property/unit suites, " + fmt(secs, "%.1f") + " s" +
              (failed.empty() ? "" : "; failing:" + failed)};
}

}  // namespace

int main() {
  report(1, "gradient correctness", guarded(gradient_check));
  report(2, "golden sentence extraction", guarded(sentence_golden));
  report(3, "oracle equivalence", guarded(oracle_equivalence));

  const auto config = kgrt::config::load_run_config(KGRT_REFERENCE_CONFIG);
  const fs::path root = fs::temp_directory_path() / "kgrt_acceptance";
  fs::remove_all(root);
  std::optional<ReferenceRun> ref;
  std::string ref_error;
  try {
    ref = run_reference(config, root / "first");
  } catch (const std::exception& e) {
    ref_error = e.what();
  }
  auto needs_ref = [&](const std::function<Verdict(const ReferenceRun&)>& f) {
    return ref ? guarded([&] { return f(*ref); }) : Verdict{false, "reference run failed: " + ref_error};
  };
  report(4, "loss finding (a)", needs_ref(loss_finding));
  report(5, "AUC finding (b)", needs_ref(auc_finding));
  report(6, "round-trip semantic loss", needs_ref(semantic_loss));
  report(7, "invariant suite", guarded(invariant_suite));
  report(8, "roundtrip determinism",
         ref ? guarded([&] { return determinism(config, root / "first", root / "second"); })
             : Verdict{false, "reference run failed: " + ref_error});
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
