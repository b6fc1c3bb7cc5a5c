#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Var is a handle to a node in a dynamically built graph. Leaf nodes created
// with requires_grad=true act as parameters and persist across graphs; every
// other node lives as long as some downstream handle refers to it. Ops whose
// inputs are all constant return constants and record nothing, so frozen
// tables and inference paths cost no tape.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace kerl::ad {

using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (parameters).
  Matrix& mutable_value() { return node_->value; }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient accumulated so far, or zeros of the value's shape.
  Matrix grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Seeds d(self)/d(self) = 1 and propagates. Self must be 1x1.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  friend Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> bw);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  std::shared_ptr<Node> node_;
};

inline Var constant(Matrix value) { return Var(std::move(value), false); }
inline Var parameter(Matrix value) { return Var(std::move(value), true); }
Var scalar_constant(double v);

/// Builds a result node. The closure runs with the node whose grad is set and
/// should push into parents via push_grad.
Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> bw);
void push_grad(Node& self, std::size_t parent, const Matrix& g);

// Elementwise and broadcasting arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a (n x c) + row (1 x c) broadcast down the rows.
Var add_row(const Var& a, const Var& row);
/// a (n x c) scaled row-wise by col (n x 1).
Var mul_col(const Var& a, const Var& col);
Var one_minus(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Constant sparse matrix times a variable.
Var spmm(const SparseMatrix& a, const Var& x);

// Nonlinearities.
Var tanh(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
/// log(sigmoid(x)) evaluated without overflow.
Var log_sigmoid(const Var& a);

// Row-wise normalizations.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
/// Per-row p-norm (p = 1 or 2), shape n x 1. Subgradient 0 at the origin.
Var row_norm(const Var& a, int p);
/// Rows scaled to unit L2 norm.
Var row_normalize(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Reductions and reshaping.
Var sum(const Var& a);
Var mean(const Var& a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(const Var& a, std::span<const std::int64_t> rows);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
/// out(i) = a(i, cols[i]), shape n x 1.
Var pick(const Var& a, std::span<const std::int64_t> cols);

// Ragged segments. offsets has S+1 entries; segment s covers rows
// [offsets[s], offsets[s+1]). Empty segments are allowed.
Var segment_softmax(const Var& scores, std::span<const std::int64_t> offsets);
/// out(s, :) = sum_{i in s} weights(i) * x(i, :), shape S x d.
Var segment_pool(const Var& weights, const Var& x, std::span<const std::int64_t> offsets);

}  // namespace kerl::ad
