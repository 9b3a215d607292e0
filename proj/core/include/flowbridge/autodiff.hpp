#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "flowbridge/matrix.hpp"

namespace flowbridge::autodiff {

/// Reverse-mode tape over dense matrix operations. A fresh graph is built per
/// loss evaluation; parameters enter as copied slices of a flat vector and
/// their gradients are accumulated back by offset after backward().
class Graph {
 public:
  using Id = int;

  Id constant(Matrix v);
  Id scalar_constant(double v) { return constant(Matrix::scalar(v)); }

  /// Copies rows*cols entries of `flat` starting at `offset` into a tracked
  /// leaf. Gradient lands at the same offset in accumulate_param_grads.
  Id parameter(const std::vector<double>& flat, size_t offset, int rows, int cols);

  Id matmul(Id a, Id b);
  Id matmul_const_left(Matrix c, Id a);
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id add_col_broadcast(Id m, Id col);  // m[r x c] + col[r x 1] in every column
  Id scale(Id a, double s);
  Id add_scalar(Id a, double s);
  Id vstack(const std::vector<Id>& parts);

  Id tanh_(Id a);
  Id exp_(Id a);
  Id log_floor(Id a, double eps);  // ln(max(a, eps))
  Id sigmoid_(Id a);
  Id softplus_(Id a);  // ln(1 + e^x), overflow-safe
  Id square(Id a);

  Id mul_const(Id a, Matrix c);
  Id add_const(Id a, Matrix c);

  Id gather_cols(Id a, std::vector<int> idx);
  Id scatter_add_cols(Id a, std::vector<int> dest, int out_cols);
  /// out[. , dest[p]] += weights[0, p] * directions[. , p]
  Id weighted_sum_cols(Id weights, Matrix directions, std::vector<int> dest, int out_cols);

  Id sum(Id a);           // 1x1
  Id colwise_sum(Id a);   // 1 x cols
  Id mean_all(Id a);
  Id dot_const(Id a, Matrix c);

  Id softmax_cols(Id a);

  /// Seeds d(root)=1 and propagates through the tape. Root must be 1x1.
  void backward(Id root);

  /// Adds every parameter gradient into `grad` at its recorded offset.
  void accumulate_param_grads(std::vector<double>& grad) const;

  const Matrix& value(Id id) const { return nodes_[id].value; }
  double scalar_value(Id id) const { return nodes_[id].value[0]; }
  Matrix& grad(Id id) { return nodes_[id].grad; }
  bool requires_grad(Id id) const { return nodes_[id].requires_grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Graph&)> back;  // empty for leaves / grad-free nodes
  };

  Id push(Matrix value, bool requires_grad, std::function<void(Graph&)> back);
  void ensure_grad(Id id);

  std::vector<Node> nodes_;
  std::vector<std::pair<Id, size_t>> params_;  // node id -> flat offset
};

}  // namespace flowbridge::autodiff
