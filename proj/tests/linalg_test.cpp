#include <gtest/gtest.h>

#include <cmath>

#include "mmae/linalg.hpp"
#include "test_util.hpp"

using namespace mmae;
using mmae::testing::max_abs_diff;
using mmae::testing::random_matrix;

TEST(Matrix, RejectsNonFiniteAndBadShapes) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, NAN, 4}), ValidationError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Matrix(0, 3), ShapeError);
  EXPECT_THROW(Matrix(1, 1, INFINITY), ValidationError);
}

TEST(Matmul, IdentityAndDirect) {
  Matrix m{{3, 4}, {5, 6}};
  EXPECT_EQ(matmul(Matrix::identity(2), m), m);
  Matrix r = matmul(Matrix{{1, 2}}, Matrix{{3}, {4}});
  EXPECT_EQ(r.rows(), 1u);
  EXPECT_DOUBLE_EQ(r(0, 0), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  auto a = random_matrix(5, 7, rng);
  auto b = random_matrix(7, 3, rng);
  Matrix ref(5, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 7; ++k) s += a(i, k) * b(k, j);
      ref(i, j) = s;
    }
  EXPECT_LT(max_abs_diff(matmul(a, b), ref), 1e-12);
  EXPECT_LT(max_abs_diff(matmul_bt(a, transpose(b)), ref), 1e-12);
  EXPECT_LT(max_abs_diff(matmul_at(transpose(a), b), ref), 1e-12);
}

TEST(Matmul, ShapeErrorNamesShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL();
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("(2x3)"), std::string::npos);
  }
}

TEST(Matmul, AssociativityProperty) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t p = 1 + uniform_index(rng, 6), q = 1 + uniform_index(rng, 6),
                r = 1 + uniform_index(rng, 6), s = 1 + uniform_index(rng, 6);
    auto a = random_matrix(p, q, rng), b = random_matrix(q, r, rng), c = random_matrix(r, s, rng);
    auto lhs = matmul(matmul(a, b), c);
    auto rhs = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      const double scale = std::max(1.0, std::abs(lhs.data()[i]));
      EXPECT_LE(std::abs(lhs.data()[i] - rhs.data()[i]) / scale, 1e-9);
    }
  }
}

TEST(Activation, KnownValues) {
  EXPECT_DOUBLE_EQ(activate(0.0, Activation::sigmoid), 0.5);
  EXPECT_DOUBLE_EQ(activate(-3.0, Activation::relu), 0.0);
  EXPECT_DOUBLE_EQ(activate(3.0, Activation::relu), 3.0);
  EXPECT_DOUBLE_EQ(activate_grad(0.0, Activation::sigmoid), 0.25);
  EXPECT_DOUBLE_EQ(activate_grad(0.0, Activation::relu), 0.0);
  EXPECT_GT(activate(-800.0, Activation::sigmoid), -1e-300);
  EXPECT_LT(activate(800.0, Activation::sigmoid), 1.0 + 1e-15);
}

TEST(Activation, TanhMatchesExponentialFormula) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double x = uniform(rng, -5, 5);
    const double ref = (std::exp(x) - std::exp(-x)) / (std::exp(x) + std::exp(-x));
    EXPECT_NEAR(activate(x, Activation::tanh), ref, 1e-12);
  }
}

TEST(Activation, GradientsMatchCentralDifferences) {
  Rng rng(4);
  const double h = 1e-6;
  for (auto kind : {Activation::sigmoid, Activation::relu, Activation::tanh, Activation::linear}) {
    for (int i = 0; i < 200; ++i) {
      double x = uniform(rng, -4, 4);
      if (kind == Activation::relu && std::abs(x) < 1e-3) continue;  // kink
      const double fd = (activate(x + h, kind) - activate(x - h, kind)) / (2 * h);
      EXPECT_NEAR(activate_grad(x, kind), fd, 1e-6) << to_string(kind) << " at " << x;
    }
  }
}

TEST(Activation, RangeProperties) {
  Rng rng(5);
  auto x = random_matrix(10, 10, rng, -50, 50);
  auto sig = activate(x, Activation::sigmoid);
  auto rel = activate(x, Activation::relu);
  for (double v : sig.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (double v : rel.data()) EXPECT_GE(v, 0.0);
}

TEST(MseLoss, Values) {
  Matrix x{{1, 2}};
  EXPECT_EQ(mse_loss(x, x), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(x, Matrix{{0, 2}}), 1.0);
  EXPECT_THROW(mse_loss(Matrix(1, 2), Matrix(2, 1)), ShapeError);
}

TEST(MseLoss, BatchMeanOfRowNorms) {
  Rng rng(6);
  auto x = random_matrix(3, 4, rng), z = random_matrix(3, 4, rng);
  double oracle = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    double row = 0;
    for (std::size_t c = 0; c < 4; ++c) row += (x(r, c) - z(r, c)) * (x(r, c) - z(r, c));
    oracle += row / 3.0;
  }
  EXPECT_NEAR(mse_loss(x, z), oracle, 1e-14);
  EXPECT_EQ(mse_loss(x, z), mse_loss(z, x));
}

TEST(BceLoss, Values) {
  EXPECT_NEAR(bce_loss(Matrix{{1}}, Matrix{{1 - 1e-12}}), 1e-12, 1e-15);
  EXPECT_NEAR(bce_loss(Matrix{{1}}, Matrix{{0.5}}), std::log(2.0), 1e-15);
  // Clamped: exact 0 / 1 predictions stay finite.
  EXPECT_TRUE(std::isfinite(bce_loss(Matrix{{1, 0}}, Matrix{{0, 1}})));
}

TEST(BceLoss, TermwiseOracleAndNonNegative) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_matrix(4, 5, rng, 0, 1), z = random_matrix(4, 5, rng, 0.01, 0.99);
    double total = 0;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 5; ++c)
        total += -(x(r, c) * std::log(z(r, c)) + (1 - x(r, c)) * std::log(1 - z(r, c)));
    EXPECT_NEAR(bce_loss(x, z), total / 4.0, 1e-10);
    EXPECT_GE(bce_loss(x, z), 0.0);
  }
}

TEST(LossGrad, MatchesFiniteDifferences) {
  Rng rng(8);
  auto x = random_matrix(3, 4, rng, 0.05, 0.95), z = random_matrix(3, 4, rng, 0.05, 0.95);
  for (auto kind : {Loss::mse, Loss::bce}) {
    auto g = loss_grad(kind, x, z);
    for (std::size_t i = 0; i < z.size(); ++i) {
      Matrix zp = z, zm = z;
      zp.data()[i] += 1e-6;
      zm.data()[i] -= 1e-6;
      const double fd = (loss_value(kind, x, zp) - loss_value(kind, x, zm)) / 2e-6;
      EXPECT_NEAR(g.data()[i], fd, 1e-6);
    }
  }
}

TEST(Softmax, KnownRows) {
  auto p = softmax_rows(Matrix{{2, 2, 2}});
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  p = softmax_rows(Matrix{{0, std::log(3.0)}});
  EXPECT_NEAR(p(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(p(0, 1), 0.75, 1e-15);
  p = softmax_rows(Matrix{{1000, 1000}});
  EXPECT_EQ(p(0, 0), 0.5);
  EXPECT_EQ(p(0, 1), 0.5);
}

TEST(Softmax, RowsSumToOneForExtremeLogits) {
  Rng rng(9);
  auto x = random_matrix(50, 7, rng, -1e6, 1e6);
  auto p = softmax_rows(x);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0;
    for (double v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SymmetricEigen, ReconstructsMatrix) {
  Rng rng(10);
  auto a = random_matrix(6, 6, rng);
  auto sym = matmul_at(a, a);
  auto e = symmetric_eigen(sym);
  for (std::size_t i = 1; i < e.values.size(); ++i) EXPECT_GE(e.values[i - 1], e.values[i]);
  Matrix d(6, 6);
  for (std::size_t i = 0; i < 6; ++i) d(i, i) = e.values[i];
  auto rec = matmul_bt(matmul(e.vectors, d), e.vectors);
  EXPECT_LT(max_abs_diff(rec, sym), 1e-10);
  EXPECT_LT(max_abs_diff(matmul_at(e.vectors, e.vectors), Matrix::identity(6)), 1e-10);
}
