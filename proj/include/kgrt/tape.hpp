#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kgrt/numerics.hpp"

namespace kgrt::num {

struct ValueId {
  std::size_t index = 0;
  friend auto operator<=>(const ValueId&, const ValueId&) = default;
};

class Gradients {
 public:
  // Gradient of a trainable leaf; zero-filled if the loss does not depend on it.
  const DenseMatrix& at(ValueId id) const;
  bool contains(ValueId id) const { return grads_.contains(id); }
  std::size_t size() const { return grads_.size(); }

  // Operation indices in the order backward visited them.
  const std::vector<std::size_t>& visit_order() const { return visit_order_; }

 private:
  friend class Tape;
  std::map<ValueId, DenseMatrix> grads_;
  std::vector<std::size_t> visit_order_;
};

// Records the matrix operations of one loss evaluation and replays them in
// reverse for gradients. Single-threaded; build a fresh tape per step.
class Tape {
 public:
  ValueId leaf(DenseMatrix value, bool trainable);
  ValueId constant(DenseMatrix value) { return leaf(std::move(value), false); }

  const DenseMatrix& value(ValueId id) const { return values_.at(id.index); }
  double scalar(ValueId id) const;
  std::size_t num_values() const { return values_.size(); }
  std::size_t num_ops() const { return ops_.size(); }
  const std::string& op_name(std::size_t op) const { return ops_.at(op).name; }

  ValueId matmul(ValueId a, ValueId b);
  ValueId matmul_nt(ValueId a, ValueId b);  // a * b^T
  ValueId add(ValueId a, ValueId b);
  ValueId add_row(ValueId a, ValueId row);  // broadcast a 1xC row over every row of a
  ValueId mul(ValueId a, ValueId b);        // elementwise
  ValueId scale(ValueId a, double s);
  ValueId relu(ValueId a);
  ValueId sum(ValueId a);
  // Rows of `table` selected by `indices`; a negative index yields a zero row.
  ValueId gather_rows(ValueId table, std::span<const long> indices);
  ValueId mean_rows(ValueId a, const std::vector<bool>& valid_rows);
  ValueId concat_rows(std::span<const ValueId> parts);
  ValueId masked_softmax(ValueId logits, const DenseMatrix& mask);
  ValueId row_kl_divergence(ValueId p, ValueId q, const std::vector<bool>& valid_rows);
  ValueId sigmoid_cross_entropy(ValueId logits_column, std::span<const double> labels);
  // sum_i weights[i] * parts[i]; parts share a shape.
  ValueId weighted_sum(std::span<const ValueId> parts, std::span<const double> weights);

  Gradients backward(ValueId loss) const;

 private:
  using Grads = std::vector<DenseMatrix>;
  struct Op {
    std::string name;
    std::size_t output;
    std::function<void(const Tape&, Grads&)> backprop;
  };

  ValueId record(std::string name, DenseMatrix value, std::function<void(const Tape&, Grads&)> backprop);
  static DenseMatrix& grad_slot(Grads& grads, const Tape& tape, std::size_t id);

  std::vector<DenseMatrix> values_;
  std::vector<bool> trainable_;
  std::vector<bool> needs_grad_;
  std::vector<Op> ops_;
};

inline Gradients backward(const Tape& tape, ValueId loss) { return tape.backward(loss); }

using ScalarFunction = std::function<double(const std::vector<DenseMatrix>&)>;

// Central differences (f(w + h) - f(w - h)) / 2h for every coordinate of every
// matrix in `weights`. Coordinates are visited matrix by matrix in row-major
// order, evaluating +h before -h.
std::vector<DenseMatrix> finite_difference_grad(const ScalarFunction& f,
                                                std::vector<DenseMatrix> weights,
                                                double h = 1e-5);

}  // namespace kgrt::num
