#include "kgrt/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "kgrt/error.hpp"

namespace kgrt::num {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("DenseMatrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseMatrix(r, c, std::move(data));
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string DenseMatrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
  }
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
  }
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  }
  return out;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + a.shape_string() + "^T * " + b.shape_string());
  }
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  }
  return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

DenseMatrix masked_softmax(const DenseMatrix& logits, const DenseMatrix& mask) {
  require_same_shape(logits, mask, "masked_softmax");
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    bool any_allowed = false;
    double row_max = -INFINITY;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      if (mask(r, c) > kMaskForbidden / 2) any_allowed = true;
      row_max = std::max(row_max, logits(r, c) + mask(r, c));
    }
    if (!any_allowed) {
      throw NumericError("masked_softmax: row " + std::to_string(r) + " has every position forbidden");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      const double e = std::exp(logits(r, c) + mask(r, c) - row_max);
      out(r, c) = e;
      total += e;
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) /= total;
  }
  if (!out.all_finite()) throw NumericError("masked_softmax: non-finite output");
  return out;
}

double row_kl_divergence(const DenseMatrix& p, const DenseMatrix& q,
                         const std::vector<bool>& valid_rows) {
  require_same_shape(p, q, "row_kl_divergence");
  if (valid_rows.size() != p.rows()) {
    throw ShapeError("row_kl_divergence: " + std::to_string(valid_rows.size()) +
                     " row flags for " + std::to_string(p.rows()) + " rows");
  }
  std::size_t n_valid = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    if (!valid_rows[r]) continue;
    ++n_valid;
    double sp = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) {
      sp += std::clamp(p(r, c), kKlEpsilon, 1.0);
      sq += std::clamp(q(r, c), kKlEpsilon, 1.0);
    }
    double row = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const double pk = std::clamp(p(r, c), kKlEpsilon, 1.0) / sp;
      const double qk = std::clamp(q(r, c), kKlEpsilon, 1.0) / sq;
      row += pk * (std::log(pk) - std::log(qk));
    }
    total += row;
  }
  if (n_valid == 0) throw NumericError("row_kl_divergence: no valid rows");
  const double kl = total / static_cast<double>(n_valid);
  if (!std::isfinite(kl)) throw NumericError("row_kl_divergence: non-finite result");
  return kl;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double sigmoid_cross_entropy(std::span<const double> logits, std::span<const double> labels) {
  if (logits.empty()) throw NumericError("sigmoid_cross_entropy: empty input");
  if (logits.size() != labels.size()) {
    throw ShapeError("sigmoid_cross_entropy: " + std::to_string(logits.size()) + " logits vs " +
                     std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return total / static_cast<double>(logits.size());
}

}  // namespace kgrt::num
