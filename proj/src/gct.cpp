#include "kgrt/gct.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kgrt/rng.hpp"

namespace kgrt::gct {

using num::DenseMatrix;
using num::Tape;
using num::ValueId;

std::string to_string(LossMode mode) { return mode == LossMode::original ? "original" : "modified"; }

LossMode parse_loss_mode(const std::string& text) {
  if (text == "original") return LossMode::original;
  if (text == "modified") return LossMode::modified;
  throw ConfigError("unknown loss mode '" + text + "' (expected original or modified)");
}

void GctConfig::validate() const {
  if (num_blocks < 2) throw ConfigError("model.num_blocks must be at least 2");
  if (embed_dim < 1 || mlp_hidden < 1) throw ConfigError("model.embed_dim and model.mlp_hidden must be positive");
  if (!(lambda > 0.0)) throw ConfigError("model.lambda must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("model.learning_rate must be positive");
  if (batch_size < 1 || eval_every < 1) throw ConfigError("model.batch_size and model.eval_every must be positive");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ConfigError("model.eval_fraction must be in (0, 1)");
}

std::vector<DenseMatrix> GctModel::weights() const {
  std::vector<DenseMatrix> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

void GctModel::set_weights(const std::vector<DenseMatrix>& weights) {
  if (weights.size() != params.size()) throw ShapeError("GctModel::set_weights: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    num::require_same_shape(params[i].value, weights[i], "GctModel::set_weights");
    params[i].value = weights[i];
  }
}

GctModel init_model(const GctConfig& config, const cohort::Vocabulary& vocab) {
  config.validate();
  if (vocab.size() == 0) throw Error("init_model: empty vocabulary");
  GctModel m;
  m.config = config;
  m.vocab = vocab;
  const std::size_t d = config.embed_dim;
  const std::size_t h = config.mlp_hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(derive_seed(config.seed, "init"));

  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    DenseMatrix w(rows, cols);
    for (double& x : w.data()) x = rng.uniform(-bound, bound);
    m.params.push_back({std::move(name), std::move(w)});
    return m.params.size() - 1;
  };

  m.embedding = add("embedding", vocab.size(), d);
  for (std::size_t j = 1; j <= config.num_blocks; ++j) {
    const std::string prefix = "block" + std::to_string(j) + ".";
    BlockLayout b;
    if (j > 1) {
      b.w_q = add(prefix + "w_q", d, d);
      b.w_k = add(prefix + "w_k", d, d);
    }
    b.w_v = add(prefix + "w_v", d, d);
    b.mlp_w1 = add(prefix + "mlp.w1", d, h);
    b.mlp_b1 = add(prefix + "mlp.b1", 1, h);
    b.mlp_w2 = add(prefix + "mlp.w2", h, d);
    b.mlp_b2 = add(prefix + "mlp.b2", 1, d);
    m.blocks.push_back(b);
  }
  m.head_w = add("head.w", d, 1);
  m.head_b = add("head.b", 1, 1);
  return m;
}

namespace {

struct TapedVisit {
  std::vector<ValueId> attention;
  std::vector<ValueId> features;
  std::vector<ValueId> regularization;  // blocks 2..L
  std::vector<ValueId> relu_inputs;
  ValueId logit;
};

TapedVisit forward_visit(Tape& tape, const std::vector<ValueId>& p, const GctModel& model,
                         const cohort::EncodedVisit& visit) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(model.config.embed_dim));
  TapedVisit out;
  ValueId x = tape.gather_rows(p[model.embedding], visit.token_ids);
  for (std::size_t j = 0; j < model.blocks.size(); ++j) {
    const BlockLayout& b = model.blocks[j];
    ValueId attention;
    if (j == 0) {
      attention = tape.constant(visit.prior.prior);
    } else {
      ValueId q = tape.matmul(x, p[b.w_q]);
      ValueId k = tape.matmul(x, p[b.w_k]);
      attention = tape.masked_softmax(tape.scale(tape.matmul_nt(q, k), inv_sqrt_d), visit.prior.mask);
      out.regularization.push_back(tape.row_kl_divergence(out.attention.back(), attention, visit.valid));
    }
    out.attention.push_back(attention);
    ValueId mixed = tape.matmul(tape.matmul(attention, x), p[b.w_v]);
    ValueId hidden = tape.add_row(tape.matmul(mixed, p[b.mlp_w1]), p[b.mlp_b1]);
    out.relu_inputs.push_back(hidden);
    x = tape.add_row(tape.matmul(tape.relu(hidden), p[b.mlp_w2]), p[b.mlp_b2]);
    if (!tape.value(x).all_finite()) {
      throw NumericError("forward: non-finite activation in block " + std::to_string(j + 1));
    }
    out.features.push_back(x);
  }
  ValueId pooled = tape.mean_rows(x, visit.valid);
  out.logit = tape.add(tape.matmul(pooled, p[model.head_w]), p[model.head_b]);
  return out;
}

ForwardTrace to_trace(const Tape& tape, const TapedVisit& tv) {
  ForwardTrace t;
  for (ValueId a : tv.attention) t.attention.push_back(tape.value(a));
  for (ValueId f : tv.features) t.features.push_back(tape.value(f));
  t.logit = tape.scalar(tv.logit);
  t.regularization.push_back(0.0);
  for (ValueId r : tv.regularization) t.regularization.push_back(tape.scalar(r));
  for (ValueId h : tv.relu_inputs)
    for (double v : tape.value(h).data()) t.relu_active.push_back(v > 0.0);
  return t;
}

double mean_regularization_sum(const std::vector<ForwardTrace>& traces) {
  if (traces.empty()) throw Error("loss: need at least one trace");
  const std::size_t blocks = traces.front().regularization.size();
  double total = 0.0;
  for (std::size_t j = 0; j < blocks; ++j) {
    double s = 0.0;
    for (const auto& t : traces) s += t.regularization.at(j);
    total += s / static_cast<double>(traces.size());
  }
  return total;
}

}  // namespace

std::vector<ValueId> register_params(Tape& tape, const GctModel& model, bool trainable) {
  std::vector<ValueId> ids;
  ids.reserve(model.params.size());
  for (const auto& p : model.params) ids.push_back(tape.leaf(p.value, trainable));
  return ids;
}

ForwardTrace forward(const GctModel& model, const cohort::EncodedVisit& visit) {
  Tape tape;
  auto ids = register_params(tape, model, false);
  return to_trace(tape, forward_visit(tape, ids, model, visit));
}

double loss_original(const std::vector<ForwardTrace>& traces, const std::vector<int>& labels, double lambda) {
  if (traces.size() != labels.size()) throw ShapeError("loss_original: one label per trace required");
  std::vector<double> logits, y;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    logits.push_back(traces[i].logit);
    y.push_back(static_cast<double>(labels[i]));
  }
  return num::sigmoid_cross_entropy(logits, y) + lambda * mean_regularization_sum(traces);
}

double loss_modified(const std::vector<ForwardTrace>& traces, double lambda) {
  return lambda * mean_regularization_sum(traces);
}

ValueId batch_loss_on_tape(Tape& tape, const std::vector<ValueId>& param_ids, const GctModel& model,
                           const std::vector<const cohort::EncodedVisit*>& batch, LossMode mode, double lambda) {
  if (batch.empty()) throw Error("batch loss: empty batch");
  std::vector<ValueId> terms;
  std::vector<double> weights;
  std::vector<ValueId> logits;
  std::vector<double> labels;
  const double reg_weight = lambda / static_cast<double>(batch.size());
  for (const auto* visit : batch) {
    TapedVisit tv = forward_visit(tape, param_ids, model, *visit);
    for (ValueId r : tv.regularization) {
      terms.push_back(r);
      weights.push_back(reg_weight);
    }
    logits.push_back(tv.logit);
    labels.push_back(static_cast<double>(visit->label));
  }
  if (mode == LossMode::original) {
    terms.push_back(tape.sigmoid_cross_entropy(tape.concat_rows(logits), labels));
    weights.push_back(1.0);
  }
  return tape.weighted_sum(terms, weights);
}

BatchEvaluation evaluate_batch(const GctModel& model, const std::vector<const cohort::EncodedVisit*>& batch,
                               LossMode mode, double lambda) {
  BatchEvaluation out;
  std::vector<int> labels;
  for (const auto* visit : batch) {
    out.traces.push_back(forward(model, *visit));
    labels.push_back(visit->label);
  }
  out.loss = mode == LossMode::original ? loss_original(out.traces, labels, lambda)
                                        : loss_modified(out.traces, lambda);
  return out;
}

std::vector<DenseMatrix> loss_gradients(const GctModel& model, const std::vector<const cohort::EncodedVisit*>& batch,
                                        LossMode mode, double lambda) {
  Tape tape;
  auto ids = register_params(tape, model, true);
  auto grads = tape.backward(batch_loss_on_tape(tape, ids, model, batch, mode, lambda));
  std::vector<DenseMatrix> out;
  for (ValueId id : ids) out.push_back(grads.at(id));
  return out;
}

double regularization_sum(const GctModel& model, const std::vector<const cohort::EncodedVisit*>& batch) {
  std::vector<ForwardTrace> traces;
  for (const auto* visit : batch) traces.push_back(forward(model, *visit));
  return mean_regularization_sum(traces);
}

Split split_visits(std::size_t n, double eval_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_eval = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(n))));
  if (n_eval >= n) throw Error("split_visits: need non-empty training and evaluation splits");
  Split s;
  s.eval.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_eval), order.end());
  std::sort(s.eval.begin(), s.eval.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

namespace {

eval::ReportRow evaluate_split(const GctModel& model, const std::vector<const cohort::EncodedVisit*>& visits,
                               std::size_t step) {
  BatchEvaluation ev = evaluate_batch(model, visits, model.config.loss_mode, model.config.lambda);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < visits.size(); ++i) {
    scores.push_back(ev.traces[i].logit);
    labels.push_back(visits[i]->label);
  }
  return {step, eval::auc_pr(scores, labels), eval::auc_roc(scores, labels), ev.loss};
}

}  // namespace

TrainResult train(GctModel model, const std::vector<cohort::EncodedVisit>& visits, const GctConfig& config) {
  config.validate();
  model.config = config;
  TrainResult result{model, {}, split_visits(visits.size(), config.eval_fraction, derive_seed(config.seed, "split"))};
  if (config.steps == 0) return result;

  std::vector<const cohort::EncodedVisit*> eval_set;
  int eval_positives = 0;
  for (std::size_t i : result.split.eval) {
    eval_set.push_back(&visits[i]);
    eval_positives += visits[i].label;
  }
  if (config.steps >= config.eval_every &&
      (eval_positives == 0 || eval_positives == static_cast<int>(eval_set.size()))) {
    throw Error("train: evaluation split needs both label classes");
  }

  std::vector<DenseMatrix> m1, m2;
  for (const auto& p : result.model.params) {
    m1.emplace_back(p.value.rows(), p.value.cols());
    m2.emplace_back(p.value.rows(), p.value.cols());
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  Rng batch_rng(derive_seed(config.seed, "batches"));
  std::vector<std::size_t> order = result.split.train;
  batch_rng.shuffle(order);
  std::size_t cursor = 0;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<const cohort::EncodedVisit*> batch;
    while (batch.size() < config.batch_size) {
      if (cursor == order.size()) {
        batch_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&visits[order[cursor++]]);
    }

    Tape tape;
    auto ids = register_params(tape, result.model, true);
    ValueId loss;
    try {
      loss = batch_loss_on_tape(tape, ids, result.model, batch, config.loss_mode, config.lambda);
    } catch (const NumericError& e) {
      throw DivergenceError(step, result.rows, e.what());
    }
    if (!std::isfinite(tape.scalar(loss))) throw DivergenceError(step, result.rows, "non-finite loss");
    auto grads = tape.backward(loss);

    const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto& w = result.model.params[k].value.data();
      const auto& g = grads.at(ids[k]).data();
      auto& m = m1[k].data();
      auto& v = m2[k].data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        w[i] -= config.learning_rate * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + adam_eps);
      }
    }

    if (step % config.eval_every == 0) {
      eval::ReportRow row;
      try {
        row = evaluate_split(result.model, eval_set, step);
      } catch (const NumericError& e) {
        throw DivergenceError(step, result.rows, e.what());
      }
      if (!std::isfinite(row.loss)) throw DivergenceError(step, result.rows, "non-finite evaluation loss");
      result.rows.push_back(row);
    }
  }
  return result;
}

DenseMatrix attention_of_layer(const GctModel& model, const cohort::EncodedVisit& visit, std::size_t j) {
  if (j < 1 || j > model.blocks.size()) {
    throw Error("attention_of_layer: layer " + std::to_string(j) + " outside 1.." + std::to_string(model.blocks.size()));
  }
  const DenseMatrix full = j == 1 ? visit.prior.prior : forward(model, visit).attention[j - 1];
  const std::size_t n = visit.n_tokens;
  DenseMatrix out(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = full(r, c);
  return out;
}

namespace {

constexpr const char* kCheckpointMagic = "kgrt-checkpoint";
constexpr int kCheckpointVersion = 1;

nlohmann::ordered_json config_to_json(const GctConfig& c) {
  return {{"num_blocks", c.num_blocks}, {"embed_dim", c.embed_dim},         {"mlp_hidden", c.mlp_hidden},
          {"lambda", c.lambda},         {"learning_rate", c.learning_rate}, {"steps", c.steps},
          {"batch_size", c.batch_size}, {"eval_every", c.eval_every},       {"eval_fraction", c.eval_fraction},
          {"loss_mode", to_string(c.loss_mode)}, {"seed", c.seed}};
}

GctConfig config_from_json(const nlohmann::ordered_json& j) {
  GctConfig c;
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.steps = j.at("steps").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.eval_fraction = j.at("eval_fraction").get<double>();
  c.loss_mode = parse_loss_mode(j.at("loss_mode").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const GctModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint: cannot open " + path.string() + " for writing");
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config " << config_to_json(model.config).dump() << '\n';
  out << "vocab " << nlohmann::json(model.vocab.codes()).dump() << '\n';
  char buf[64];
  for (const auto& p : model.params) {
    out << "param " << p.name << ' ' << p.value.rows() << ' ' << p.value.cols();
    for (double v : p.value.data()) {
      std::snprintf(buf, sizeof buf, " %a", v);
      out << buf;
    }
    out << '\n';
  }
  out << "end\n";
  if (!out) throw Error("save_checkpoint: write failed for " + path.string());
}

GctModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open " + path.string());
  const std::string source = path.string();
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* expect) {
    if (!std::getline(in, line)) throw ParseError(source, line_no + 1, std::string("expected '") + expect + "'");
    ++line_no;
    if (line.rfind(expect, 0) != 0) throw ParseError(source, line_no, std::string("expected '") + expect + "'");
    return line.substr(std::string(expect).size());
  };

  std::istringstream header(next(kCheckpointMagic));
  int version = 0;
  if (!(header >> version) || version != kCheckpointVersion) {
    throw ParseError(source, line_no, "unsupported checkpoint version");
  }
  GctModel model;
  try {
    const GctConfig config = config_from_json(nlohmann::ordered_json::parse(next("config ")));
    const auto codes = nlohmann::json::parse(next("vocab ")).get<std::vector<std::string>>();
    model = init_model(config, cohort::Vocabulary(codes));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, line_no, e.what());
  }
  for (auto& p : model.params) {
    std::istringstream fields(next("param "));
    std::string name;
    std::size_t rows = 0, cols = 0;
    fields >> name >> rows >> cols;
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols()) {
      throw ParseError(source, line_no, "parameter '" + name + "' does not match the model layout (expected '" +
                                           p.name + "' " + p.value.shape_string() + ")");
    }
    std::string token;
    for (double& v : p.value.data()) {
      if (!(fields >> token)) throw ParseError(source, line_no, "too few values for '" + name + "'");
      char* end = nullptr;
      v = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size()) throw ParseError(source, line_no, "bad number '" + token + "'");
    }
    if (fields >> token) throw ParseError(source, line_no, "too many values for '" + name + "'");
  }
  next("end");
  return model;
}

}  // namespace kgrt::gct
