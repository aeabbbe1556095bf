#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "kgrt/cohort.hpp"
#include "kgrt/error.hpp"
#include "kgrt/metrics.hpp"
#include "kgrt/numerics.hpp"
#include "kgrt/tape.hpp"

namespace kgrt::gct {

enum class LossMode { original, modified };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& text);

struct GctConfig {
  std::size_t num_blocks = 3;
  std::size_t embed_dim = 16;
  std::size_t mlp_hidden = 32;
  double lambda = 1.0;
  double learning_rate = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  std::size_t eval_every = 100;
  // Held-out share of the cohort used for the report rows.
  double eval_fraction = 0.2;
  LossMode loss_mode = LossMode::original;
  std::uint64_t seed = 42;

  // Throws ConfigError; at least two blocks are needed for a KL term between blocks.
  void validate() const;
  friend bool operator==(const GctConfig&, const GctConfig&) = default;
};

struct Parameter {
  std::string name;
  num::DenseMatrix value;
};

inline constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

// Indices into GctModel::params. Block 1 attends with the fixed prior and
// has no query/key projections.
struct BlockLayout {
  std::size_t w_q = kNoParam;
  std::size_t w_k = kNoParam;
  std::size_t w_v = kNoParam;
  std::size_t mlp_w1 = kNoParam;
  std::size_t mlp_b1 = kNoParam;
  std::size_t mlp_w2 = kNoParam;
  std::size_t mlp_b2 = kNoParam;
};

struct GctModel {
  GctConfig config;
  cohort::Vocabulary vocab;
  std::vector<Parameter> params;
  std::size_t embedding = kNoParam;
  std::vector<BlockLayout> blocks;
  std::size_t head_w = kNoParam;
  std::size_t head_b = kNoParam;

  const num::DenseMatrix& param(std::size_t i) const { return params.at(i).value; }
  std::vector<num::DenseMatrix> weights() const;
  void set_weights(const std::vector<num::DenseMatrix>& weights);
};

// Weights ~ uniform(-1/sqrt(d), 1/sqrt(d)), seeded from config.seed.
GctModel init_model(const GctConfig& config, const cohort::Vocabulary& vocab);

struct ForwardTrace {
  // attention[j] is the block j+1 attention; attention[0] is the prior P.
  std::vector<num::DenseMatrix> attention;
  std::vector<num::DenseMatrix> features;
  double logit = 0.0;
  // regularization[0] is KL(P || P) = 0; regularization[j] = KL(A_j || A_{j+1}).
  std::vector<double> regularization;
  // Sign of every hidden pre-activation, in evaluation order.
  std::vector<bool> relu_active;
};

ForwardTrace forward(const GctModel& model, const cohort::EncodedVisit& visit);

double loss_original(const std::vector<ForwardTrace>& traces, const std::vector<int>& labels, double lambda);
double loss_modified(const std::vector<ForwardTrace>& traces, double lambda);

// Loss of a batch recorded on a tape; param_ids come from register_params.
std::vector<num::ValueId> register_params(num::Tape& tape, const GctModel& model, bool trainable);
num::ValueId batch_loss_on_tape(num::Tape& tape, const std::vector<num::ValueId>& param_ids, const GctModel& model,
                                const std::vector<const cohort::EncodedVisit*>& batch, LossMode mode, double lambda);

struct BatchEvaluation {
  double loss = 0.0;
  std::vector<ForwardTrace> traces;
};

BatchEvaluation evaluate_batch(const GctModel& model, const std::vector<const cohort::EncodedVisit*>& batch,
                               LossMode mode, double lambda);

// Analytic gradient of the batch loss, one matrix per parameter.
std::vector<num::DenseMatrix> loss_gradients(const GctModel& model,
                                             const std::vector<const cohort::EncodedVisit*>& batch, LossMode mode,
                                             double lambda);

// Sum over blocks of the mean-over-visits regularization.
double regularization_sum(const GctModel& model, const std::vector<const cohort::EncodedVisit*>& batch);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

Split split_visits(std::size_t n, double eval_fraction, std::uint64_t seed);

class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t step, std::vector<eval::ReportRow> partial, const std::string& what)
      : NumericError("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step),
        partial_(std::move(partial)) {}

  std::size_t step() const { return step_; }
  const std::vector<eval::ReportRow>& partial_report() const { return partial_; }

 private:
  std::size_t step_;
  std::vector<eval::ReportRow> partial_;
};

struct TrainResult {
  GctModel model;
  std::vector<eval::ReportRow> rows;
  Split split;
};

// Adam on every trainable weight; the prior stays fixed. Appends a report
// row every eval_every steps, evaluated on the held-out split with the
// configured loss mode.
TrainResult train(GctModel model, const std::vector<cohort::EncodedVisit>& visits, const GctConfig& config);

// Block-j attention (1-based) restricted to the visit's real tokens; j = 1 is the prior.
num::DenseMatrix attention_of_layer(const GctModel& model, const cohort::EncodedVisit& visit, std::size_t j);

void save_checkpoint(const GctModel& model, const std::filesystem::path& path);
GctModel load_checkpoint(const std::filesystem::path& path);

}  // namespace kgrt::gct
