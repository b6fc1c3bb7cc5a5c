#include <gtest/gtest.h>

#include <functional>

#include "helpers.hpp"
#include "kerl/ad.hpp"
#include "kerl/errors.hpp"
#include "kerl/rng.hpp"

namespace {

using kerl::ad::Matrix;
using kerl::ad::Var;
namespace ad = kerl::ad;
using testing_support::numeric_grad;
using testing_support::random_matrix;
using testing_support::rel_error;

using UnaryOp = std::function<Var(const Var&)>;
using BinaryOp = std::function<Var(const Var&, const Var&)>;

// Reduces an op's output against a fixed random weighting so every output
// entry contributes a distinct amount to the scalar.
double weighted(const Var& out, const Matrix& w) { return (out.value().array() * w.array()).sum(); }

double check_unary(const UnaryOp& op, Matrix x0) {
  kerl::Rng rng(11);
  Var x = ad::parameter(x0);
  Var y = op(x);
  const Matrix w = random_matrix(y.rows(), y.cols(), rng);
  ad::sum(ad::mul(y, ad::constant(w))).backward();
  auto f = [&] { return weighted(op(ad::constant(x.value())), w); };
  const Matrix numeric = numeric_grad(f, x.mutable_value());
  return rel_error(x.grad(), numeric);
}

double check_binary(const BinaryOp& op, Matrix a0, Matrix b0) {
  kerl::Rng rng(12);
  Var a = ad::parameter(a0);
  Var b = ad::parameter(b0);
  Var y = op(a, b);
  const Matrix w = random_matrix(y.rows(), y.cols(), rng);
  ad::sum(ad::mul(y, ad::constant(w))).backward();
  auto f = [&] { return weighted(op(ad::constant(a.value()), ad::constant(b.value())), w); };
  const double ea = rel_error(a.grad(), numeric_grad(f, a.mutable_value()));
  const double eb = rel_error(b.grad(), numeric_grad(f, b.mutable_value()));
  return std::max(ea, eb);
}

class AdOps : public ::testing::Test {
 protected:
  kerl::Rng rng{5};
  Matrix m(Eigen::Index r, Eigen::Index c, double s = 1.0) { return random_matrix(r, c, rng, s); }
};

TEST_F(AdOps, ElementwiseGradientsMatchFiniteDifferences) {
  EXPECT_LT(check_binary(ad::add, m(3, 4), m(3, 4)), 1e-7);
  EXPECT_LT(check_binary(ad::sub, m(3, 4), m(3, 4)), 1e-7);
  EXPECT_LT(check_binary(ad::mul, m(3, 4), m(3, 4)), 1e-7);
  EXPECT_LT(check_binary(ad::add_row, m(3, 4), m(1, 4)), 1e-7);
  EXPECT_LT(check_binary(ad::mul_col, m(3, 4), m(3, 1)), 1e-7);
  EXPECT_LT(check_unary([](const Var& x) { return ad::scale(x, -2.5); }, m(2, 3)), 1e-7);
  EXPECT_LT(check_unary([](const Var& x) { return ad::add_scalar(x, 3.0); }, m(2, 3)), 1e-7);
  EXPECT_LT(check_unary(ad::one_minus, m(2, 3)), 1e-7);
}

TEST_F(AdOps, LinearAlgebraGradientsMatchFiniteDifferences) {
  EXPECT_LT(check_binary(ad::matmul, m(3, 4), m(4, 2)), 1e-7);
  EXPECT_LT(check_binary(ad::matmul_nt, m(3, 4), m(5, 4)), 1e-7);
  EXPECT_LT(check_unary(ad::transpose, m(3, 4)), 1e-7);
  ad::SparseMatrix s(3, 4);
  s.insert(0, 1) = 0.5;
  s.insert(2, 0) = -1.5;
  s.insert(2, 3) = 2.0;
  s.makeCompressed();
  EXPECT_LT(check_unary([&](const Var& x) { return ad::spmm(s, x); }, m(4, 2)), 1e-7);
}

TEST_F(AdOps, NonlinearityGradientsMatchFiniteDifferences) {
  EXPECT_LT(check_unary(ad::tanh, m(3, 3)), 1e-7);
  EXPECT_LT(check_unary(ad::sigmoid, m(3, 3, 4.0)), 1e-7);
  EXPECT_LT(check_unary(ad::exp, m(3, 3)), 1e-7);
  EXPECT_LT(check_unary(ad::log_sigmoid, m(3, 3, 5.0)), 1e-7);
  Matrix pos = m(3, 3).array().abs() + 0.5;
  EXPECT_LT(check_unary(ad::log, pos), 1e-7);
  // Keep entries away from the kink.
  Matrix away = m(3, 3);
  away = away.unaryExpr([](double v) { return v >= 0 ? v + 0.1 : v - 0.1; });
  EXPECT_LT(check_unary(ad::relu, away), 1e-7);
}

TEST_F(AdOps, RowNormalizationGradientsMatchFiniteDifferences) {
  EXPECT_LT(check_unary(ad::softmax_rows, m(3, 5, 3.0)), 1e-7);
  EXPECT_LT(check_unary(ad::log_softmax_rows, m(3, 5, 3.0)), 1e-7);
  EXPECT_LT(check_unary([](const Var& x) { return ad::row_norm(x, 2); }, m(3, 4)), 1e-7);
  Matrix away = m(3, 4).unaryExpr([](double v) { return v >= 0 ? v + 0.1 : v - 0.1; });
  EXPECT_LT(check_unary([](const Var& x) { return ad::row_norm(x, 1); }, away), 1e-7);
  EXPECT_LT(check_unary(ad::row_normalize, m(3, 4)), 1e-7);
  const Matrix gamma = m(1, 4);
  const Matrix beta = m(1, 4);
  EXPECT_LT(check_unary([&](const Var& x) { return ad::layer_norm_rows(x, ad::constant(gamma), ad::constant(beta)); },
                        m(3, 4)),
            1e-6);
  const Matrix x = m(3, 4);
  EXPECT_LT(check_binary([&](const Var& g, const Var& b) { return ad::layer_norm_rows(ad::constant(x), g, b); },
                         m(1, 4), m(1, 4)),
            1e-7);
}

TEST_F(AdOps, ReshapeGradientsMatchFiniteDifferences) {
  EXPECT_LT(check_unary([](const Var& x) { return ad::sum(x); }, m(3, 4)), 1e-7);
  EXPECT_LT(check_unary([](const Var& x) { return ad::mean(x); }, m(3, 4)), 1e-7);
  EXPECT_LT(check_binary([](const Var& a, const Var& b) { return ad::concat_cols(std::vector<Var>{a, b, a}); },
                         m(3, 2), m(3, 4)),
            1e-7);
  EXPECT_LT(check_binary([](const Var& a, const Var& b) { return ad::concat_rows(std::vector<Var>{b, a}); },
                         m(2, 3), m(4, 3)),
            1e-7);
  const std::vector<std::int64_t> rows{2, 0, 2, 1};
  EXPECT_LT(check_unary([&](const Var& x) { return ad::gather_rows(x, rows); }, m(3, 4)), 1e-7);
  EXPECT_LT(check_unary([](const Var& x) { return ad::slice_rows(x, 1, 2); }, m(4, 3)), 1e-7);
  EXPECT_LT(check_unary([](const Var& x) { return ad::slice_cols(x, 1, 2); }, m(3, 4)), 1e-7);
  const std::vector<std::int64_t> cols{3, 0, 3};
  EXPECT_LT(check_unary([&](const Var& x) { return ad::pick(x, cols); }, m(3, 4)), 1e-7);
}

TEST_F(AdOps, SegmentOpsHandleEmptySegmentsAndGradients) {
  const std::vector<std::int64_t> offsets{0, 2, 2, 5};
  const Var s = ad::segment_softmax(ad::constant(m(5, 1)), offsets);
  EXPECT_NEAR(s.value().topRows(2).sum(), 1.0, 1e-12);
  EXPECT_NEAR(s.value().bottomRows(3).sum(), 1.0, 1e-12);
  EXPECT_LT(check_unary([&](const Var& x) { return ad::segment_softmax(x, offsets); }, m(5, 1, 3.0)), 1e-7);

  const Matrix x0 = m(5, 3);
  const Var pooled = ad::segment_pool(ad::constant(Matrix::Ones(5, 1)), ad::constant(x0), offsets);
  ASSERT_EQ(pooled.rows(), 3);
  EXPECT_TRUE(pooled.value().row(1).isZero(0.0));
  EXPECT_LT((pooled.value().row(2) - x0.bottomRows(3).colwise().sum()).norm(), 1e-12);
  EXPECT_LT(check_binary([&](const Var& w, const Var& x) { return ad::segment_pool(w, x, offsets); }, m(5, 1),
                         m(5, 3)),
            1e-7);
}

TEST(Ad, ConstantsRecordNoTape) {
  const Var a = ad::constant(Matrix::Ones(2, 2));
  const Var b = ad::matmul(a, ad::tanh(a));
  EXPECT_FALSE(b.requires_grad());
  EXPECT_TRUE(b.node()->parents.empty());
}

TEST(Ad, GradientsAccumulateUntilCleared) {
  Var x = ad::parameter(Matrix::Constant(1, 1, 3.0));
  ad::mul(x, x).backward();
  ad::mul(x, x).backward();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 0.0);
}

TEST(Ad, SharedSubexpressionReceivesBothPaths) {
  Var x = ad::parameter(Matrix::Constant(1, 1, 2.0));
  Var y = ad::tanh(x);
  ad::add(ad::mul(y, y), y).backward();
  const double t = std::tanh(2.0);
  EXPECT_NEAR(x.grad()(0, 0), (2 * t + 1) * (1 - t * t), 1e-14);
}

TEST(Ad, LogSigmoidStaysFiniteForLargeInputs) {
  Matrix v(1, 4);
  v << -800.0, -40.0, 40.0, 800.0;
  const Var y = ad::log_sigmoid(ad::constant(v));
  EXPECT_TRUE(y.value().allFinite());
  EXPECT_NEAR(y.value()(0, 0), -800.0, 1e-9);
  EXPECT_NEAR(y.value()(0, 3), 0.0, 1e-12);
}

TEST(Ad, SoftmaxIsShiftInvariantAndNormalized) {
  kerl::Rng rng(3);
  const Matrix x = random_matrix(4, 6, rng, 50.0);
  const Matrix p = ad::softmax_rows(ad::constant(x)).value();
  const Matrix q = ad::softmax_rows(ad::constant((x.array() + 1000.0).matrix())).value();
  EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  EXPECT_GE(p.minCoeff(), 0.0);
}

TEST(Ad, ShapeMismatchIsReported) {
  const Var a = ad::constant(Matrix::Ones(2, 3));
  const Var b = ad::constant(Matrix::Ones(3, 2));
  EXPECT_THROW(ad::add(a, b), kerl::ShapeMismatch);
  EXPECT_THROW(ad::matmul(a, a), kerl::ShapeMismatch);
}

TEST(Ad, BackwardRequiresScalar) {
  Var x = ad::parameter(Matrix::Ones(2, 2));
  EXPECT_THROW(ad::tanh(x).backward(), kerl::ShapeMismatch);
}

}  // namespace
