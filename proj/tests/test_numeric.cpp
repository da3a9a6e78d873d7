#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gvssm/errors.hpp"
#include "gvssm/gradcheck.hpp"
#include "gvssm/matrix.hpp"
#include "gvssm/random.hpp"

using namespace gvssm;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.next_gaussian();
  return m;
}

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix m{{1.0, 2.0}, {3.0, 4.0}};
  EXPECT_EQ(matmul(Matrix::identity(2), m), m);
}

TEST(Matmul, ZeroTimesAnythingIsZero) {
  Rng rng(3);
  const Matrix out = matmul(Matrix::zeros(2, 3), random_matrix(rng, 3, 2));
  EXPECT_EQ(out, Matrix::zeros(2, 2));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix a = random_matrix(rng, 4, 5);
    const Matrix b = random_matrix(rng, 5, 3);
    const Matrix got = matmul(a, b);
    const Matrix want = triple_loop(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
  }
}

TEST(Matmul, TransposedVariantsAgree) {
  Rng rng(5);
  const Matrix a = random_matrix(rng, 6, 4);
  const Matrix b = random_matrix(rng, 6, 3);
  const Matrix c = random_matrix(rng, 5, 4);
  const Matrix atb = matmul_at_b(a, b);
  const Matrix abt = matmul_a_bt(a, c);
  const Matrix atb_ref = triple_loop(transpose(a), b);
  const Matrix abt_ref = triple_loop(a, transpose(c));
  for (std::size_t i = 0; i < atb.size(); ++i) EXPECT_NEAR(atb.data()[i], atb_ref.data()[i], 1e-12);
  for (std::size_t i = 0; i < abt.size(); ++i) EXPECT_NEAR(abt.data()[i], abt_ref.data()[i], 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
}

TEST(MatrixOps, ConcatSliceGather) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5}, {6}};
  const Matrix ab = hconcat({&a, &b});
  EXPECT_EQ(ab, (Matrix{{1, 2, 5}, {3, 4, 6}}));
  EXPECT_EQ(slice_cols(ab, 1, 2), (Matrix{{2, 5}, {4, 6}}));
  const std::size_t idx[] = {1, 1, 0};
  EXPECT_EQ(gather_rows(a, idx), (Matrix{{3, 4}, {3, 4}, {1, 2}}));
  const Matrix tall = Matrix::zeros(3, 1);
  EXPECT_THROW(hconcat({&a, &tall}), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  const auto x = sample_gaussian(a, 1000);
  const auto y = sample_gaussian(b, 1000);
  EXPECT_EQ(x, y);
  Rng c(8);
  EXPECT_NE(sample_gaussian(c, 1000), x);
}

TEST(Rng, SplitIsIndependentOfParentProgress) {
  Rng parent(42);
  const Rng child_before = parent.split(3);
  for (int i = 0; i < 100; ++i) parent.next_u64();
  Rng c1 = child_before;
  Rng c2 = parent.split(3);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(c1.next_u64(), c2.next_u64());
  Rng d = parent.split(4);
  Rng c3 = parent.split(3);
  EXPECT_NE(d.next_u64(), c3.next_u64());
}

TEST(Rng, GaussianMoments) {
  Rng rng(2024);
  const std::size_t n = 100000;
  const auto x = sample_gaussian(rng, n);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Rng, UniformOpenIntervalAndMean) {
  Rng rng(99);
  const std::size_t n = 100000;
  const auto u = sample_uniform(rng, n);
  double mean = 0.0;
  for (double v : u) {
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
    mean += v;
  }
  mean /= n;
  // Uniform(0, 1) has standard deviation 1/sqrt(12).
  EXPECT_LT(std::abs(mean - 0.5), 3.0 / std::sqrt(12.0 * n));
  Rng again(99);
  EXPECT_EQ(sample_uniform(again, n), u);
}

TEST(Rng, NextBelowCoversRange) {
  Rng rng(1);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) ++hits[rng.next_below(5)];
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Glorot, SingleEntryWithinUnitBound) {
  Rng rng(4);
  const Matrix w = glorot_init(rng, 1, 1);
  EXPECT_LE(std::abs(w(0, 0)), std::sqrt(3.0));
}

TEST(Glorot, EveryEntryWithinBound) {
  Rng rng(4);
  const Matrix w = glorot_init(rng, 64, 32);
  const double bound = std::sqrt(6.0 / 96.0);
  double max_abs = 0.0;
  for (double v : w.data()) max_abs = std::max(max_abs, std::abs(v));
  EXPECT_LE(max_abs, bound);
  EXPECT_GT(max_abs, 0.9 * bound);
  Rng again(4);
  EXPECT_EQ(glorot_init(again, 64, 32), w);
}

TEST(FiniteDifference, QuadraticGradient) {
  const std::vector<double> p{1.0, 2.0};
  const auto g = finite_difference_gradient(
      [](std::span<const double> v) { return v[0] * v[0] + v[1] * v[1]; }, p, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-6);
  EXPECT_NEAR(g[1], 4.0, 1e-6);
}

TEST(FiniteDifference, ConstantAndLinear) {
  const std::vector<double> p{0.3, -1.0, 4.0};
  for (double v : finite_difference_gradient([](std::span<const double>) { return 5.0; }, p, 1e-5)) {
    EXPECT_EQ(v, 0.0);
  }
  const auto g = finite_difference_gradient([](std::span<const double> v) { return v[0]; }, p, 1e-5);
  EXPECT_NEAR(g[0], 1.0, 1e-9);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
  EXPECT_NEAR(g[2], 0.0, 1e-12);
}

TEST(FiniteDifference, NonFiniteProbeNamesCoordinate) {
  const std::vector<double> p{1.0, 0.0};
  try {
    finite_difference_gradient([](std::span<const double> v) { return std::sqrt(v[1]) + v[0]; }, p, 1e-5);
    FAIL() << "expected ProbeError";
  } catch (const ProbeError& e) {
    EXPECT_EQ(e.coordinate(), 1u);
  }
  EXPECT_THROW(finite_difference_gradient([](std::span<const double>) { return 0.0; }, p, 0.0), ConfigError);
}

TEST(RelativeError, ScalarAndVector) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_error(1.0, 3.0), 0.5, 1e-15);
  const std::vector<double> a{3.0, 0.0}, n{0.0, 4.0};
  EXPECT_NEAR(relative_error(a, n), 5.0 / 7.0, 1e-15);
}
