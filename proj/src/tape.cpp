#include "kgrt/tape.hpp"

#include <algorithm>
#include <cmath>

#include "kgrt/error.hpp"

namespace kgrt::num {

const DenseMatrix& Gradients::at(ValueId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw Error("Gradients::at: value is not a trainable leaf");
  return it->second;
}

ValueId Tape::leaf(DenseMatrix value, bool trainable) {
  values_.push_back(std::move(value));
  trainable_.push_back(trainable);
  needs_grad_.push_back(trainable);
  return ValueId{values_.size() - 1};
}

double Tape::scalar(ValueId id) const {
  const DenseMatrix& v = value(id);
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("Tape::scalar: value is " + v.shape_string());
  return v(0, 0);
}

ValueId Tape::record(std::string name, DenseMatrix value,
                     std::function<void(const Tape&, Grads&)> backprop) {
  // The output's own id is values_.size() at this point; ops capture it by
  // computing it before calling record.
  const std::size_t out = values_.size();
  values_.push_back(std::move(value));
  trainable_.push_back(false);
  needs_grad_.push_back(true);
  ops_.push_back(Op{std::move(name), out, std::move(backprop)});
  return ValueId{out};
}

DenseMatrix& Tape::grad_slot(Grads& grads, const Tape& tape, std::size_t id) {
  DenseMatrix& g = grads[id];
  if (g.empty() && !tape.values_[id].empty()) {
    g = DenseMatrix(tape.values_[id].rows(), tape.values_[id].cols());
  }
  return g;
}

namespace {

void accumulate(DenseMatrix& into, const DenseMatrix& delta) {
  auto& a = into.data();
  const auto& b = delta.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

ValueId Tape::matmul(ValueId a, ValueId b) {
  const std::size_t out = values_.size();
  return record("matmul", num::matmul(value(a), value(b)), [a, b, out](const Tape& t, Grads& g) {
    const DenseMatrix& go = g[out];
    if (t.needs_grad_[a.index]) accumulate(grad_slot(g, t, a.index), num::matmul_nt(go, t.values_[b.index]));
    if (t.needs_grad_[b.index]) accumulate(grad_slot(g, t, b.index), matmul_tn(t.values_[a.index], go));
  });
}

ValueId Tape::matmul_nt(ValueId a, ValueId b) {
  const std::size_t out = values_.size();
  return record("matmul_nt", num::matmul_nt(value(a), value(b)), [a, b, out](const Tape& t, Grads& g) {
    const DenseMatrix& go = g[out];
    if (t.needs_grad_[a.index]) accumulate(grad_slot(g, t, a.index), num::matmul(go, t.values_[b.index]));
    if (t.needs_grad_[b.index]) accumulate(grad_slot(g, t, b.index), matmul_tn(go, t.values_[a.index]));
  });
}

ValueId Tape::add(ValueId a, ValueId b) {
  require_same_shape(value(a), value(b), "Tape::add");
  DenseMatrix v = value(a);
  accumulate(v, value(b));
  const std::size_t out = values_.size();
  return record("add", std::move(v), [a, b, out](const Tape& t, Grads& g) {
    if (t.needs_grad_[a.index]) accumulate(grad_slot(g, t, a.index), g[out]);
    if (t.needs_grad_[b.index]) accumulate(grad_slot(g, t, b.index), g[out]);
  });
}

ValueId Tape::add_row(ValueId a, ValueId row) {
  const DenseMatrix& av = value(a);
  const DenseMatrix& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("Tape::add_row: " + av.shape_string() + " + " + rv.shape_string());
  }
  DenseMatrix v = av;
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) v(r, c) += rv(0, c);
  const std::size_t out = values_.size();
  return record("add_row", std::move(v), [a, row, out](const Tape& t, Grads& g) {
    const DenseMatrix& go = g[out];
    if (t.needs_grad_[a.index]) accumulate(grad_slot(g, t, a.index), go);
    if (t.needs_grad_[row.index]) {
      DenseMatrix& gr = grad_slot(g, t, row.index);
      for (std::size_t r = 0; r < go.rows(); ++r)
        for (std::size_t c = 0; c < go.cols(); ++c) gr(0, c) += go(r, c);
    }
  });
}

ValueId Tape::mul(ValueId a, ValueId b) {
  require_same_shape(value(a), value(b), "Tape::mul");
  DenseMatrix v = value(a);
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] *= value(b).data()[i];
  const std::size_t out = values_.size();
  return record("mul", std::move(v), [a, b, out](const Tape& t, Grads& g) {
    const auto& go = g[out].data();
    if (t.needs_grad_[a.index]) {
      auto& ga = grad_slot(g, t, a.index).data();
      const auto& bv = t.values_[b.index].data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (t.needs_grad_[b.index]) {
      auto& gb = grad_slot(g, t, b.index).data();
      const auto& av = t.values_[a.index].data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

ValueId Tape::scale(ValueId a, double s) {
  DenseMatrix v = value(a);
  for (double& x : v.data()) x *= s;
  const std::size_t out = values_.size();
  return record("scale", std::move(v), [a, s, out](const Tape& t, Grads& g) {
    if (!t.needs_grad_[a.index]) return;
    auto& ga = grad_slot(g, t, a.index).data();
    const auto& go = g[out].data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * go[i];
  });
}

ValueId Tape::relu(ValueId a) {
  DenseMatrix v = value(a);
  for (double& x : v.data()) x = x < 0.0 ? 0.0 : x;  // NaN propagates
  const std::size_t out = values_.size();
  return record("relu", std::move(v), [a, out](const Tape& t, Grads& g) {
    if (!t.needs_grad_[a.index]) return;
    auto& ga = grad_slot(g, t, a.index).data();
    const auto& go = g[out].data();
    const auto& av = t.values_[a.index].data();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (av[i] > 0.0) ga[i] += go[i];
  });
}

ValueId Tape::sum(ValueId a) {
  double s = 0.0;
  for (double x : value(a).data()) s += x;
  const std::size_t out = values_.size();
  return record("sum", DenseMatrix(1, 1, s), [a, out](const Tape& t, Grads& g) {
    if (!t.needs_grad_[a.index]) return;
    const double go = g[out](0, 0);
    for (double& x : grad_slot(g, t, a.index).data()) x += go;
  });
}

ValueId Tape::gather_rows(ValueId table, std::span<const long> indices) {
  const DenseMatrix& tv = value(table);
  DenseMatrix v(indices.size(), tv.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0) continue;
    if (static_cast<std::size_t>(indices[r]) >= tv.rows()) {
      throw ShapeError("Tape::gather_rows: index " + std::to_string(indices[r]) + " out of " +
                       std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.row(indices[r]).begin(), tv.cols(), v.row(r).begin());
  }
  std::vector<long> idx(indices.begin(), indices.end());
  const std::size_t out = values_.size();
  return record("gather_rows", std::move(v), [table, idx = std::move(idx), out](const Tape& t, Grads& g) {
    if (!t.needs_grad_[table.index]) return;
    DenseMatrix& gt = grad_slot(g, t, table.index);
    const DenseMatrix& go = g[out];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      for (std::size_t c = 0; c < go.cols(); ++c) gt(idx[r], c) += go(r, c);
    }
  });
}

ValueId Tape::mean_rows(ValueId a, const std::vector<bool>& valid_rows) {
  const DenseMatrix& av = value(a);
  if (valid_rows.size() != av.rows()) throw ShapeError("Tape::mean_rows: row flag count mismatch");
  const auto n_valid = static_cast<double>(std::count(valid_rows.begin(), valid_rows.end(), true));
  if (n_valid == 0) throw NumericError("Tape::mean_rows: no valid rows");
  DenseMatrix v(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    if (!valid_rows[r]) continue;
    for (std::size_t c = 0; c < av.cols(); ++c) v(0, c) += av(r, c);
  }
  for (double& x : v.data()) x /= n_valid;
  std::vector<bool> valid(valid_rows.begin(), valid_rows.end());
  const std::size_t out = values_.size();
  return record("mean_rows", std::move(v), [a, valid = std::move(valid), n_valid, out](const Tape& t, Grads& g) {
    if (!t.needs_grad_[a.index]) return;
    DenseMatrix& ga = grad_slot(g, t, a.index);
    const DenseMatrix& go = g[out];
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      if (!valid[r]) continue;
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += go(0, c) / n_valid;
    }
  });
}

ValueId Tape::concat_rows(std::span<const ValueId> parts) {
  if (parts.empty()) throw ShapeError("Tape::concat_rows: no parts");
  const std::size_t cols = value(parts[0]).cols();
  std::vector<double> data;
  std::size_t rows = 0;
  for (ValueId p : parts) {
    const DenseMatrix& pv = value(p);
    if (pv.cols() != cols) throw ShapeError("Tape::concat_rows: column mismatch");
    data.insert(data.end(), pv.data().begin(), pv.data().end());
    rows += pv.rows();
  }
  std::vector<ValueId> ids(parts.begin(), parts.end());
  const std::size_t out = values_.size();
  return record("concat_rows", DenseMatrix(rows, cols, std::move(data)),
                [ids = std::move(ids), out](const Tape& t, Grads& g) {
                  const auto& go = g[out].data();
                  std::size_t offset = 0;
                  for (ValueId p : ids) {
                    const std::size_t n = t.values_[p.index].size();
                    if (t.needs_grad_[p.index]) {
                      auto& gp = grad_slot(g, t, p.index).data();
                      for (std::size_t i = 0; i < n; ++i) gp[i] += go[offset + i];
                    }
                    offset += n;
                  }
                });
}

ValueId Tape::masked_softmax(ValueId logits, const DenseMatrix& mask) {
  DenseMatrix y = num::masked_softmax(value(logits), mask);
  const std::size_t out = values_.size();
  return record("masked_softmax", std::move(y), [logits, out](const Tape& t, Grads& g) {
    if (!t.needs_grad_[logits.index]) return;
    const DenseMatrix& yv = t.values_[out];
    const DenseMatrix& go = g[out];
    DenseMatrix& gl = grad_slot(g, t, logits.index);
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < yv.cols(); ++c) dot += go(r, c) * yv(r, c);
      for (std::size_t c = 0; c < yv.cols(); ++c) gl(r, c) += yv(r, c) * (go(r, c) - dot);
    }
  });
}

namespace {

// Gradient of x_hat = clamp(x) / sum(clamp(x)) pulled back onto x, given the
// upstream gradient w.r.t. x_hat.
void pull_back_normalized_clamp(std::span<const double> x, std::span<const double> x_hat,
                                std::span<const double> upstream, double row_sum, double scale,
                                std::span<double> into) {
  double dot = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) dot += upstream[k] * x_hat[k];
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] < kKlEpsilon || x[k] > 1.0) continue;
    into[k] += scale * (upstream[k] - dot) / row_sum;
  }
}

}  // namespace

ValueId Tape::row_kl_divergence(ValueId p, ValueId q, const std::vector<bool>& valid_rows) {
  const double kl = num::row_kl_divergence(value(p), value(q), valid_rows);
  std::vector<bool> valid(valid_rows.begin(), valid_rows.end());
  const std::size_t out = values_.size();
  return record("row_kl_divergence", DenseMatrix(1, 1, kl),
                [p, q, valid = std::move(valid), out](const Tape& t, Grads& g) {
    const bool want_p = t.needs_grad_[p.index];
    const bool want_q = t.needs_grad_[q.index];
    if (!want_p && !want_q) return;
    const DenseMatrix& pv = t.values_[p.index];
    const DenseMatrix& qv = t.values_[q.index];
    const auto n_valid = static_cast<double>(std::count(valid.begin(), valid.end(), true));
    const double scale = g[out](0, 0) / n_valid;
    const std::size_t cols = pv.cols();
    std::vector<double> p_hat(cols), q_hat(cols), up(cols);
    for (std::size_t r = 0; r < pv.rows(); ++r) {
      if (!valid[r]) continue;
      double sp = 0.0, sq = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        sp += std::clamp(pv(r, c), kKlEpsilon, 1.0);
        sq += std::clamp(qv(r, c), kKlEpsilon, 1.0);
      }
      for (std::size_t c = 0; c < cols; ++c) {
        p_hat[c] = std::clamp(pv(r, c), kKlEpsilon, 1.0) / sp;
        q_hat[c] = std::clamp(qv(r, c), kKlEpsilon, 1.0) / sq;
      }
      if (want_p) {
        for (std::size_t c = 0; c < cols; ++c) up[c] = std::log(p_hat[c]) - std::log(q_hat[c]) + 1.0;
        pull_back_normalized_clamp(pv.row(r), p_hat, up, sp, scale, grad_slot(g, t, p.index).row(r));
      }
      if (want_q) {
        for (std::size_t c = 0; c < cols; ++c) up[c] = -p_hat[c] / q_hat[c];
        pull_back_normalized_clamp(qv.row(r), q_hat, up, sq, scale, grad_slot(g, t, q.index).row(r));
      }
    }
  });
}

ValueId Tape::sigmoid_cross_entropy(ValueId logits_column, std::span<const double> labels) {
  const DenseMatrix& z = value(logits_column);
  if (z.cols() != 1) throw ShapeError("Tape::sigmoid_cross_entropy: logits must be a column");
  const double loss = num::sigmoid_cross_entropy(z.data(), labels);
  std::vector<double> y(labels.begin(), labels.end());
  const std::size_t out = values_.size();
  return record("sigmoid_cross_entropy", DenseMatrix(1, 1, loss),
                [logits_column, y = std::move(y), out](const Tape& t, Grads& g) {
    if (!t.needs_grad_[logits_column.index]) return;
    const auto& zv = t.values_[logits_column.index].data();
    auto& gz = grad_slot(g, t, logits_column.index).data();
    const double scale = g[out](0, 0) / static_cast<double>(zv.size());
    for (std::size_t i = 0; i < zv.size(); ++i) gz[i] += scale * (sigmoid(zv[i]) - y[i]);
  });
}

ValueId Tape::weighted_sum(std::span<const ValueId> parts, std::span<const double> weights) {
  if (parts.empty() || parts.size() != weights.size()) {
    throw ShapeError("Tape::weighted_sum: need one weight per part");
  }
  DenseMatrix v(value(parts[0]).rows(), value(parts[0]).cols());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    require_same_shape(v, value(parts[i]), "Tape::weighted_sum");
    const auto& pv = value(parts[i]).data();
    for (std::size_t k = 0; k < pv.size(); ++k) v.data()[k] += weights[i] * pv[k];
  }
  std::vector<ValueId> ids(parts.begin(), parts.end());
  std::vector<double> w(weights.begin(), weights.end());
  const std::size_t out = values_.size();
  return record("weighted_sum", std::move(v),
                [ids = std::move(ids), w = std::move(w), out](const Tape& t, Grads& g) {
    const auto& go = g[out].data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad_[ids[i].index]) continue;
      auto& gp = grad_slot(g, t, ids[i].index).data();
      for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += w[i] * go[k];
    }
  });
}

Gradients Tape::backward(ValueId loss) const {
  const DenseMatrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + lv.shape_string());
  }
  Grads grads(values_.size());
  grads[loss.index] = DenseMatrix(1, 1, 1.0);

  Gradients result;
  result.visit_order_.reserve(ops_.size());
  for (std::size_t i = ops_.size(); i-- > 0;) {
    result.visit_order_.push_back(i);
    const Op& op = ops_[i];
    if (grads[op.output].empty()) continue;
    op.backprop(*this, grads);
  }
  for (std::size_t id = 0; id < values_.size(); ++id) {
    if (!trainable_[id]) continue;
    DenseMatrix g = grads[id].empty() ? DenseMatrix(values_[id].rows(), values_[id].cols())
                                      : std::move(grads[id]);
    result.grads_.emplace(ValueId{id}, std::move(g));
  }
  return result;
}

std::vector<DenseMatrix> finite_difference_grad(const ScalarFunction& f,
                                                std::vector<DenseMatrix> weights, double h) {
  if (!(h > 0.0)) throw NumericError("finite_difference_grad: step must be positive");
  std::vector<DenseMatrix> grads;
  grads.reserve(weights.size());
  for (std::size_t m = 0; m < weights.size(); ++m) {
    DenseMatrix g(weights[m].rows(), weights[m].cols());
    for (std::size_t k = 0; k < weights[m].size(); ++k) {
      double& w = weights[m].data()[k];
      const double saved = w;
      w = saved + h;
      const double up = f(weights);
      w = saved - h;
      const double down = f(weights);
      w = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_difference_grad: non-finite function value");
      }
      g.data()[k] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace kgrt::num
