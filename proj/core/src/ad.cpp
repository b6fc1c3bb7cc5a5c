#include "kerl/ad.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "kerl/errors.hpp"

namespace kerl::ad {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(op) + ": " + shape(a.value()) + " vs " + shape(b.value()));
  }
}

const Matrix& pv(const Node& self, std::size_t i) { return self.parents[i]->value; }

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

void Var::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeMismatch("backward() needs a 1x1 result, got " + shape(node_->value));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

Var scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

void push_grad(Node& self, std::size_t parent, const Matrix& g) {
  Node& p = *self.parents[parent];
  if (p.requires_grad) p.accumulate(g);
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {a, b}, [](Node& self) {
    push_grad(self, 0, self.grad);
    push_grad(self, 1, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {a, b}, [](Node& self) {
    push_grad(self, 0, self.grad);
    push_grad(self, 1, -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    push_grad(self, 0, self.grad.cwiseProduct(pv(self, 1)));
    push_grad(self, 1, self.grad.cwiseProduct(pv(self, 0)));
  });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](Node& self) { push_grad(self, 0, self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return make_op(a.value().array() + s, {a}, [](Node& self) { push_grad(self, 0, self.grad); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeMismatch("add_row: " + shape(a.value()) + " + " + shape(row.value()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a, row}, [](Node& self) {
    push_grad(self, 0, self.grad);
    push_grad(self, 1, self.grad.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw ShapeMismatch("mul_col: " + shape(a.value()) + " * " + shape(col.value()));
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_op(std::move(out), {a, col}, [](Node& self) {
    const Matrix& av = pv(self, 0);
    const Matrix& cv = pv(self, 1);
    push_grad(self, 0, self.grad.array().colwise() * cv.col(0).array());
    push_grad(self, 1, self.grad.cwiseProduct(av).rowwise().sum());
  });
}

Var one_minus(const Var& a) { return add_scalar(scale(a, -1.0), 1.0); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul: " + shape(a.value()) + " * " + shape(b.value()));
  }
  return make_op(a.value() * b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) push_grad(self, 0, self.grad * pv(self, 1).transpose());
    if (self.parents[1]->requires_grad) push_grad(self, 1, pv(self, 0).transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw ShapeMismatch("matmul_nt: " + shape(a.value()) + " * (" + shape(b.value()) + ")^T");
  }
  return make_op(a.value() * b.value().transpose(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) push_grad(self, 0, self.grad * pv(self, 1));
    if (self.parents[1]->requires_grad) push_grad(self, 1, self.grad.transpose() * pv(self, 0));
  });
}

Var transpose(const Var& a) {
  return make_op(a.value().transpose(), {a},
                 [](Node& self) { push_grad(self, 0, self.grad.transpose()); });
}

Var spmm(const SparseMatrix& a, const Var& x) {
  if (a.cols() != x.rows()) {
    throw ShapeMismatch("spmm: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " * " + shape(x.value()));
  }
  Matrix out = a * x.value();
  // The sparse operand is copied into the closure; adjacency matrices are small.
  return make_op(std::move(out), {x}, [a](Node& self) {
    push_grad(self, 0, Matrix(a.transpose() * self.grad));
  });
}

Var tanh(const Var& a) {
  Matrix y = a.value().array().tanh();
  return make_op(std::move(y), {a}, [](Node& self) {
    push_grad(self, 0, self.grad.array() * (1.0 - self.value.array().square()));
  });
}

Var relu(const Var& a) {
  Matrix y = a.value().cwiseMax(0.0);
  return make_op(std::move(y), {a}, [](Node& self) {
    push_grad(self, 0, (pv(self, 0).array() > 0.0).cast<double>() * self.grad.array());
  });
}

Var sigmoid(const Var& a) {
  Matrix y = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return make_op(std::move(y), {a}, [](Node& self) {
    push_grad(self, 0, self.grad.array() * self.value.array() * (1.0 - self.value.array()));
  });
}

Var log(const Var& a) {
  Matrix y = a.value().array().log();
  return make_op(std::move(y), {a}, [](Node& self) {
    push_grad(self, 0, self.grad.array() / pv(self, 0).array());
  });
}

Var exp(const Var& a) {
  Matrix y = a.value().array().exp();
  return make_op(std::move(y), {a},
                 [](Node& self) { push_grad(self, 0, self.grad.array() * self.value.array()); });
}

Var log_sigmoid(const Var& a) {
  Matrix y = a.value().unaryExpr(
      [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); });
  return make_op(std::move(y), {a}, [](Node& self) {
    // d/dx log sigmoid(x) = sigmoid(-x)
    Matrix d = pv(self, 0).unaryExpr([](double x) {
      return x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
    });
    push_grad(self, 0, self.grad.cwiseProduct(d));
  });
}

namespace {

Matrix softmax_values(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

Var softmax_rows(const Var& a) {
  return make_op(softmax_values(a.value()), {a}, [](Node& self) {
    const Matrix& y = self.value;
    Matrix dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.array() * (self.grad.colwise() - dot.col(0)).array();
    push_grad(self, 0, g);
  });
}

Var log_softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    y.row(i) = x.row(i).array() - lse;
  }
  return make_op(std::move(y), {a}, [](Node& self) {
    Matrix p = self.value.array().exp();
    Matrix gsum = self.grad.rowwise().sum();
    Matrix g = self.grad - (p.array().colwise() * gsum.col(0).array()).matrix();
    push_grad(self, 0, g);
  });
}

Var row_norm(const Var& a, int p) {
  if (p != 1 && p != 2) throw ShapeMismatch("row_norm: p must be 1 or 2");
  const Matrix& x = a.value();
  Matrix y = p == 1 ? Matrix(x.cwiseAbs().rowwise().sum()) : Matrix(x.rowwise().norm());
  return make_op(std::move(y), {a}, [p](Node& self) {
    const Matrix& x = pv(self, 0);
    Matrix g(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      const double gi = self.grad(i, 0);
      if (p == 1) {
        g.row(i) = gi * x.row(i).unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
      } else {
        const double n = self.value(i, 0);
        g.row(i) = n > 0 ? Eigen::RowVectorXd(gi * x.row(i) / n) : Eigen::RowVectorXd::Zero(x.cols());
      }
    }
    push_grad(self, 0, g);
  });
}

Var row_normalize(const Var& a) {
  const Matrix& x = a.value();
  Matrix norms = x.rowwise().norm();
  Matrix y = x.array().colwise() / norms.col(0).array();
  return make_op(std::move(y), {a}, [norms](Node& self) {
    const Matrix& y = self.value;
    Matrix dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = (self.grad - (y.array().colwise() * dot.col(0).array()).matrix()).array().colwise() /
               norms.col(0).array();
    push_grad(self, 0, g);
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeMismatch("layer_norm_rows: affine params must be 1x" + std::to_string(d));
  }
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return make_op(std::move(y), {x, gamma, beta}, [xhat, inv_std](Node& self) {
    const Matrix& g = self.grad;
    const Matrix& gam = pv(self, 1);
    const Index d = xhat.cols();
    if (self.parents[0]->requires_grad) {
      Matrix gx(g.rows(), d);
      for (Index i = 0; i < g.rows(); ++i) {
        Eigen::RowVectorXd gh = g.row(i).cwiseProduct(gam.row(0));
        const double m1 = gh.mean();
        const double m2 = gh.cwiseProduct(xhat.row(i)).mean();
        gx.row(i) = inv_std(i) * (gh.array() - m1 - xhat.row(i).array() * m2);
      }
      push_grad(self, 0, gx);
    }
    push_grad(self, 1, g.cwiseProduct(xhat).colwise().sum());
    push_grad(self, 2, g.colwise().sum());
  });
}

Var sum(const Var& a) {
  return make_op(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& self) {
    const Matrix& x = pv(self, 0);
    push_grad(self, 0, Matrix::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> widths;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    widths.push_back(p.cols());
    at += p.cols();
  }
  return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [widths](Node& self) {
    Index at = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (self.parents[i]->requires_grad) push_grad(self, i, self.grad.middleCols(at, widths[i]));
      at += widths[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> heights;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    heights.push_back(p.rows());
    at += p.rows();
  }
  return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [heights](Node& self) {
    Index at = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      if (self.parents[i]->requires_grad) push_grad(self, i, self.grad.middleRows(at, heights[i]));
      at += heights[i];
    }
  });
}

Var gather_rows(const Var& a, std::span<const std::int64_t> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw ShapeMismatch("gather_rows: index " + std::to_string(rows[i]) + " out of range");
    }
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  return make_op(std::move(out), {a}, [idx](Node& self) {
    const Matrix& x = pv(self, 0);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    push_grad(self, 0, g);
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeMismatch("slice_rows out of range");
  return make_op(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    const Matrix& x = pv(self, 0);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = self.grad;
    push_grad(self, 0, g);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeMismatch("slice_cols out of range");
  return make_op(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    const Matrix& x = pv(self, 0);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = self.grad;
    push_grad(self, 0, g);
  });
}

Var pick(const Var& a, std::span<const std::int64_t> cols) {
  if (static_cast<Index>(cols.size()) != a.rows()) throw ShapeMismatch("pick: one column per row");
  Matrix out(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    if (cols[i] < 0 || cols[i] >= a.cols()) throw ShapeMismatch("pick: column out of range");
    out(i, 0) = a.value()(i, cols[i]);
  }
  std::vector<std::int64_t> idx(cols.begin(), cols.end());
  return make_op(std::move(out), {a}, [idx](Node& self) {
    const Matrix& x = pv(self, 0);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g(static_cast<Index>(i), idx[i]) = self.grad(static_cast<Index>(i), 0);
    push_grad(self, 0, g);
  });
}

namespace {

void check_offsets(std::span<const std::int64_t> offsets, Index rows) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows) {
    throw ShapeMismatch("segment offsets must start at 0 and end at the row count");
  }
  for (std::size_t s = 1; s < offsets.size(); ++s) {
    if (offsets[s] < offsets[s - 1]) throw ShapeMismatch("segment offsets must be nondecreasing");
  }
}

}  // namespace

Var segment_softmax(const Var& scores, std::span<const std::int64_t> offsets) {
  if (scores.cols() != 1) throw ShapeMismatch("segment_softmax expects a column");
  check_offsets(offsets, scores.rows());
  const Matrix& x = scores.value();
  Matrix y(x.rows(), 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const Index b = offsets[s];
    const Index n = offsets[s + 1] - b;
    if (n == 0) continue;
    const double m = x.middleRows(b, n).maxCoeff();
    y.middleRows(b, n) = (x.middleRows(b, n).array() - m).exp();
    y.middleRows(b, n) /= y.middleRows(b, n).sum();
  }
  std::vector<std::int64_t> off(offsets.begin(), offsets.end());
  return make_op(std::move(y), {scores}, [off](Node& self) {
    const Matrix& y = self.value;
    Matrix g(y.rows(), 1);
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      const Index b = off[s];
      const Index n = off[s + 1] - b;
      if (n == 0) continue;
      const double dot = self.grad.middleRows(b, n).cwiseProduct(y.middleRows(b, n)).sum();
      g.middleRows(b, n) = y.middleRows(b, n).array() * (self.grad.middleRows(b, n).array() - dot);
    }
    push_grad(self, 0, g);
  });
}

Var segment_pool(const Var& weights, const Var& x, std::span<const std::int64_t> offsets) {
  if (weights.cols() != 1 || weights.rows() != x.rows()) {
    throw ShapeMismatch("segment_pool: weights must be a column matching x rows");
  }
  check_offsets(offsets, x.rows());
  const Index segments = static_cast<Index>(offsets.size()) - 1;
  Matrix out = Matrix::Zero(segments, x.cols());
  for (Index s = 0; s < segments; ++s) {
    for (Index i = offsets[s]; i < offsets[s + 1]; ++i) out.row(s) += weights.value()(i, 0) * x.value().row(i);
  }
  std::vector<std::int64_t> off(offsets.begin(), offsets.end());
  return make_op(std::move(out), {weights, x}, [off](Node& self) {
    const Matrix& w = pv(self, 0);
    const Matrix& xv = pv(self, 1);
    Matrix gw(w.rows(), 1);
    Matrix gx(xv.rows(), xv.cols());
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      const Index seg = static_cast<Index>(s);
      for (Index i = off[s]; i < off[s + 1]; ++i) {
        gw(i, 0) = self.grad.row(seg).dot(xv.row(i));
        gx.row(i) = w(i, 0) * self.grad.row(seg);
      }
    }
    push_grad(self, 0, gw);
    push_grad(self, 1, gx);
  });
}

}  // namespace kerl::ad
