#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "kgrt/cohort.hpp"
#include "kgrt/gct.hpp"
#include "kgrt/kg.hpp"
#include "kgrt/rng.hpp"
#include "test_support.hpp"

namespace kgrt::testing {

// Graph, cohort, table and encodings for model-level tests.
struct World {
  kg::KnowledgeGraph graph;
  std::vector<cohort::VisitRecord> visits;
  cohort::ConditionalTable table;
  cohort::Vocabulary vocab;
  std::vector<cohort::EncodedVisit> encoded;

  std::vector<const cohort::EncodedVisit*> pointers() const {
    std::vector<const cohort::EncodedVisit*> out;
    for (const auto& e : encoded) out.push_back(&e);
    return out;
  }
};

inline World make_world(std::size_t n_diag, std::size_t n_proc, std::size_t n_visits, std::uint64_t seed,
                        double density = 0.3, std::size_t diagnoses_max = 3) {
  kg::GeneratorOptions o;
  o.counts = {{"diagnosis", n_diag}, {"procedure", n_proc}};
  o.edge_density = density;
  auto g = kg::generate_synthetic_kg(o, seed);
  cohort::CohortOptions co;
  co.n_visits = n_visits;
  co.diagnoses_max = diagnoses_max;
  auto visits = cohort::sample_cohort(g, co, seed + 1);
  auto table = cohort::count_cooccurrence(visits);
  auto vocab = cohort::Vocabulary::from_graph(g);
  auto encoded = cohort::encode_batch(visits, table, vocab, cohort::max_visit_tokens(visits));
  return World{std::move(g), std::move(visits), std::move(table), std::move(vocab), std::move(encoded)};
}

// A small model plus a batch of padded visits with at most six real tokens.
struct GradInstance {
  gct::GctModel model;
  std::vector<cohort::EncodedVisit> batch;

  std::vector<const cohort::EncodedVisit*> pointers() const {
    std::vector<const cohort::EncodedVisit*> out;
    for (const auto& e : batch) out.push_back(&e);
    return out;
  }
};

inline GradInstance random_grad_instance(Rng& rng, std::size_t embed_dim = 8, std::size_t num_blocks = 3) {
  const auto n_diag = static_cast<std::size_t>(rng.between(1, 3));
  const auto n_proc = static_cast<std::size_t>(rng.between(1, 3));
  std::vector<std::string> diags, procs, codes;
  for (std::size_t i = 0; i < n_diag; ++i) diags.push_back("d" + std::to_string(i));
  for (std::size_t i = 0; i < n_proc; ++i) procs.push_back("p" + std::to_string(i));
  codes = diags;
  codes.insert(codes.end(), procs.begin(), procs.end());

  auto random_visit = [&](std::uint64_t id) {
    cohort::VisitRecord v{id, {}, {}, static_cast<int>(rng.below(2))};
    for (const auto& d : diags)
      if (rng.bernoulli(0.6)) v.diagnoses.push_back(d);
    for (const auto& p : procs)
      if (rng.bernoulli(0.6)) v.procedures.push_back(p);
    if (v.diagnoses.empty()) v.diagnoses.push_back(diags[rng.below(diags.size())]);
    if (v.procedures.empty()) v.procedures.push_back(procs[rng.below(procs.size())]);
    return v;
  };
  std::vector<cohort::VisitRecord> history;
  for (int i = 0; i < 8; ++i) history.push_back(random_visit(100 + i));
  auto table = cohort::count_cooccurrence(history);
  for (const auto& c : codes) table.note_code(c);

  std::vector<cohort::VisitRecord> visits;
  const auto n_batch = static_cast<std::size_t>(rng.between(1, 2));
  for (std::size_t i = 0; i < n_batch; ++i) visits.push_back(random_visit(i));

  gct::GctConfig config;
  config.embed_dim = embed_dim;
  config.mlp_hidden = embed_dim;
  config.num_blocks = num_blocks;
  config.seed = rng.next_u64();
  GradInstance inst{gct::init_model(config, cohort::Vocabulary(codes)), {}};
  // Larger weights than the default init make attention far from uniform.
  for (auto& p : inst.model.params)
    for (double& w : p.value.data()) w = rng.uniform(-1.0, 1.0);
  inst.batch = cohort::encode_batch(visits, table, inst.model.vocab, 6);
  return inst;
}

struct GradCheck {
  std::size_t compared = 0;
  std::size_t skipped_kinks = 0;
  std::size_t failures = 0;
  double worst_relative_error = 0.0;
};

// Compares analytic gradients with central differences. Coordinates whose
// +h/-h perturbation flips any ReLU unit straddle a kink, where the loss is
// not differentiable on the difference stencil; those are counted and skipped.
inline GradCheck check_gradients(const GradInstance& inst, gct::LossMode mode, double lambda = 1.0,
                                 double h = 1e-3, double tolerance = 1e-4) {
  const auto batch = inst.pointers();
  const auto analytic = gct::loss_gradients(inst.model, batch, mode, lambda);

  auto pattern_of = [&](const gct::BatchEvaluation& ev) {
    std::vector<bool> p;
    for (const auto& t : ev.traces) p.insert(p.end(), t.relu_active.begin(), t.relu_active.end());
    return p;
  };
  const auto base_pattern = pattern_of(gct::evaluate_batch(inst.model, batch, mode, lambda));

  std::vector<bool> kink_per_call;
  gct::GctModel probe = inst.model;
  auto f = [&](const std::vector<num::DenseMatrix>& w) {
    probe.set_weights(w);
    auto ev = gct::evaluate_batch(probe, batch, mode, lambda);
    kink_per_call.push_back(pattern_of(ev) != base_pattern);
    return ev.loss;
  };
  // Richardson extrapolation of two central differences cancels the h^2
  // truncation term, so a larger h can keep rounding noise far below the
  // smallest gradients being compared.
  const auto coarse = num::finite_difference_grad(f, inst.model.weights(), h);
  const auto fine = num::finite_difference_grad(f, inst.model.weights(), h / 2.0);
  const std::size_t calls_per_pass = kink_per_call.size() / 2;

  GradCheck out;
  std::size_t call = 0;
  for (std::size_t m = 0; m < analytic.size(); ++m) {
    for (std::size_t k = 0; k < analytic[m].size(); ++k, call += 2) {
      if (kink_per_call[call] || kink_per_call[call + 1] || kink_per_call[calls_per_pass + call] ||
          kink_per_call[calls_per_pass + call + 1]) {
        ++out.skipped_kinks;
        continue;
      }
      const double a = analytic[m].data()[k];
      const double b = (4.0 * fine[m].data()[k] - coarse[m].data()[k]) / 3.0;
      if (std::abs(a) <= 1e-6 && std::abs(b) <= 1e-6) continue;
      ++out.compared;
      const double err = relative_error(a, b);
      out.worst_relative_error = std::max(out.worst_relative_error, err);
      if (err >= tolerance) ++out.failures;
    }
  }
  return out;
}

}  // namespace kgrt::testing
