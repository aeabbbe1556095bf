#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace kgrt::num {

// Additive pre-softmax value marking a forbidden attention position.
inline constexpr double kMaskForbidden = -1e9;

// Floor applied to both operands of the KL divergence before the log.
inline constexpr double kKlEpsilon = 1e-12;

// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  // Nested-list literal, mostly for tests: DenseMatrix::from_rows({{1, 2}, {3, 4}}).
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  std::string shape_string() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// a * b^T
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
// a^T * b
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);

// Row-wise softmax of (logits + mask). Rows are stabilized by subtracting
// their maximum. Throws ShapeError on mismatched shapes and NumericError if
// a row has every position forbidden.
DenseMatrix masked_softmax(const DenseMatrix& logits, const DenseMatrix& mask);

// Mean over valid rows of sum_k p_k ln(p_k / q_k). Both operands are clamped
// to [kKlEpsilon, 1] and each row renormalized before the log.
double row_kl_divergence(const DenseMatrix& p, const DenseMatrix& q,
                         const std::vector<bool>& valid_rows);

// Mean binary cross-entropy on logits, in the stable form
// max(z, 0) - z*y + log1p(exp(-|z|)).
double sigmoid_cross_entropy(std::span<const double> logits, std::span<const double> labels);

double sigmoid(double z);

}  // namespace kgrt::num
