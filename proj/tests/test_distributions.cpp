#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gvssm/distributions.hpp"
#include "gvssm/errors.hpp"
#include "gvssm/random.hpp"

using namespace gvssm;

namespace {

CategoricalHead head_of(std::initializer_list<std::initializer_list<double>> logits) {
  CategoricalHead h;
  h.logits = Matrix(logits);
  return h;
}

}  // namespace

TEST(ReparamLognormal, ZeroNoiseFollowsMean) {
  LognormalHead h;
  h.mu = {0.0, std::log(3.0), std::log(3.0)};
  h.log_var = {0.0, -2.0, 3.0};
  const std::vector<double> eps(3, 0.0);
  const LognormalSample s = reparam_lognormal(h, eps);
  EXPECT_DOUBLE_EQ(s.value[0], 1.0);
  EXPECT_NEAR(s.value[1], 3.0, 1e-14);
  EXPECT_NEAR(s.value[2], 3.0, 1e-14);
}

TEST(ReparamLognormal, LogSampleMoments) {
  const std::size_t n = 100000;
  LognormalHead h;
  h.mu.assign(n, 1.0);
  h.log_var.assign(n, std::log(0.25));
  Rng rng(17);
  const LognormalSample s = reparam_lognormal(h, rng);
  double mean = 0.0;
  for (double v : s.log_value) mean += v;
  mean /= n;
  EXPECT_LT(std::abs(mean - 1.0), 3.0 * 0.5 / std::sqrt(static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i) ASSERT_GT(s.value[i], 0.0);
}

TEST(ReparamLognormal, BackwardMatchesFiniteDifference) {
  LognormalHead h;
  h.mu = {0.4};
  h.log_var = {-0.3};
  const std::vector<double> eps{0.7};
  const LognormalSample s = reparam_lognormal(h, eps);
  const std::vector<double> up{1.0};
  const LognormalGrad g = reparam_lognormal_backward(h, s, {}, up);
  const double step = 1e-6;
  auto value_at = [&](double mu, double lv) {
    LognormalHead k{{mu}, {lv}};
    return reparam_lognormal(k, eps).value[0];
  };
  EXPECT_NEAR(g.mu[0], (value_at(0.4 + step, -0.3) - value_at(0.4 - step, -0.3)) / (2 * step), 1e-7);
  EXPECT_NEAR(g.log_var[0], (value_at(0.4, -0.3 + step) - value_at(0.4, -0.3 - step)) / (2 * step), 1e-7);
}

TEST(LogVariance, ClampedToBounds) {
  EXPECT_DOUBLE_EQ(clamp_log_var(100.0), kMaxLogVar);
  EXPECT_DOUBLE_EQ(clamp_log_var(-100.0), kMinLogVar);
  EXPECT_DOUBLE_EQ(clamp_log_var(0.5), 0.5);
  EXPECT_EQ(clamp_log_var_slope(100.0), 0.0);
  EXPECT_EQ(clamp_log_var_slope(0.5), 1.0);
}

TEST(Gumbel, MeanIsEulerMascheroni) {
  Rng rng(5);
  const std::size_t n = 100000;
  const auto g = sample_gumbel(rng, n);
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= n;
  // Standard Gumbel variance is pi^2 / 6.
  const double se = std::numbers::pi / std::sqrt(6.0 * n);
  EXPECT_LT(std::abs(mean - std::numbers::egamma), 3.0 * se);
  Rng again(5);
  EXPECT_EQ(sample_gumbel(again, n), g);
}

TEST(Gumbel, FixedPointAtInverseE) {
  // -log(-log(1/e)) = -log(1) = 0
  EXPECT_DOUBLE_EQ(-std::log(-std::log(std::exp(-1.0))), 0.0);
}

TEST(GumbelSoftmax, RowsOnSimplex) {
  Rng rng(8);
  CategoricalHead h;
  h.logits = Matrix(50, 5);
  for (double& v : h.logits.data()) v = 4.0 * rng.next_gaussian();
  for (double tau : {0.1, 0.5, 2.0}) {
    const auto s = gumbel_softmax(h, TemperatureConfig{tau}, rng);
    for (std::size_t i = 0; i < 50; ++i) {
      double sum = 0.0;
      for (double v : s.value.row(i)) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(GumbelSoftmax, ArgmaxFrequenciesMatchSoftmax) {
  const CategoricalHead h = head_of({{0.5, -1.0, 1.2, 0.0}});
  const Matrix p = softmax_probs(h);
  Rng rng(77);
  const int n = 100000;
  std::vector<int> wins(4, 0);
  for (int i = 0; i < n; ++i) {
    const auto s = gumbel_softmax(h, TemperatureConfig{0.01}, rng);
    std::size_t best = 0;
    for (std::size_t k = 1; k < 4; ++k)
      if (s.value(0, k) > s.value(0, best)) best = k;
    ++wins[best];
  }
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(wins[k] / static_cast<double>(n), p(0, k), 0.01);
}

TEST(GumbelSoftmax, HighTemperatureIsNearUniform) {
  const CategoricalHead h = head_of({{0.0, 0.0, 0.0, 0.0}});
  Rng rng(9);
  std::vector<double> mean(4, 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto s = gumbel_softmax(h, TemperatureConfig{10.0}, rng);
    for (std::size_t k = 0; k < 4; ++k) mean[k] += s.value(0, k) / n;
  }
  for (double m : mean) EXPECT_NEAR(m, 0.25, 0.05);
}

TEST(GumbelSoftmax, BackwardMatchesFiniteDifference) {
  const CategoricalHead h = head_of({{0.3, -0.2, 1.1}});
  const Matrix g{{0.1, -0.4, 0.25}};
  const TemperatureConfig temp{0.5};
  const Matrix up{{1.0, -2.0, 0.5}};
  const auto s = gumbel_softmax(h, temp, g);
  const Matrix d = gumbel_softmax_backward(s, temp, up);
  const double step = 1e-6;
  for (std::size_t k = 0; k < 3; ++k) {
    CategoricalHead hp = h, hm = h;
    hp.logits(0, k) += step;
    hm.logits(0, k) -= step;
    const Matrix vp = gumbel_softmax(hp, temp, g).value, vm = gumbel_softmax(hm, temp, g).value;
    double fd = 0.0;
    for (std::size_t j = 0; j < 3; ++j) fd += up(0, j) * (vp(0, j) - vm(0, j)) / (2 * step);
    EXPECT_NEAR(d(0, k), fd, 1e-7);
  }
}

TEST(GumbelSoftmax, RejectsNonPositiveTemperature) {
  Rng rng(1);
  EXPECT_THROW(gumbel_softmax(head_of({{0.0, 1.0}}), TemperatureConfig{0.0}, rng), ConfigError);
}

TEST(SoftmaxProbs, EqualLogitsGiveUniform) {
  const Matrix p = softmax_probs(head_of({{2.0, 2.0, 2.0, 2.0}}));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(p(0, k), 0.25);
}

TEST(SoftmaxProbs, LogTwoGivesThirds) {
  const Matrix p = softmax_probs(head_of({{0.0, std::log(2.0)}}));
  EXPECT_NEAR(p(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 2.0 / 3.0, 1e-15);
}

TEST(SoftmaxProbs, ShiftInvariant) {
  const Matrix a = softmax_probs(head_of({{0.3, -1.2, 2.0}}));
  const Matrix b = softmax_probs(head_of({{100.3, 98.8, 102.0}}));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a(0, k), b(0, k), 1e-12);
}

TEST(SoftmaxProbs, ExtremeLogitsStayFinite) {
  const Matrix p = softmax_probs(head_of({{1000.0, -1000.0}}));
  EXPECT_DOUBLE_EQ(p(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.0);
}

TEST(Bernoulli, IsTwoClassSoftmax) {
  BernoulliHead b{{-1.5, 0.0, 2.0}};
  const auto p = b.probability();
  const Matrix q = softmax_probs(b.as_categorical());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(p[i], 1.0 / (1.0 + std::exp(-b.logit[i])), 1e-15);
    EXPECT_NEAR(p[i], q(i, 0), 1e-15);
  }
}

TEST(PruneLogits, AllAllowedUnchanged) {
  CategoricalHead h = head_of({{0.1, 0.2, 0.3}, {1.0, -1.0, 0.0}});
  h.class_mask.assign(6, 1);
  EXPECT_EQ(prune_logits(h).logits, h.logits);
}

TEST(PruneLogits, MaskedClassIsNegligible) {
  CategoricalHead h = head_of({{0.0, 0.0, 5.0}, {3.0, 0.0, 0.0}});
  h.class_mask = {1, 1, 0, 1, 1, 0};
  const Matrix p = softmax_probs(prune_logits(h));
  EXPECT_LE(p(0, 2), 1e-6);
  EXPECT_LE(p(1, 2), 1e-6);
}

TEST(PruneLogits, SingleAllowedClassTakesAllMass) {
  CategoricalHead h = head_of({{0.0, 0.0, 0.0}});
  h.class_mask = {0, 1, 0};
  EXPECT_GE(softmax_probs(prune_logits(h))(0, 1), 1.0 - 2e-6);
}

TEST(PruneLogits, EmptyRowIsError) {
  CategoricalHead h = head_of({{0.0, 0.0}, {0.0, 0.0}});
  h.class_mask = {1, 0, 0, 0};
  EXPECT_THROW(prune_logits(h), ConfigError);
}

TEST(PruneLogits, BackwardZeroesPrunedEntries) {
  CategoricalHead h = head_of({{0.0, 0.0, 0.0}});
  h.class_mask = {1, 0, 1};
  Matrix d{{1.0, 2.0, 3.0}};
  prune_backward(h, d);
  EXPECT_EQ(d, (Matrix{{1.0, 0.0, 3.0}}));
}

TEST(Heads, NonFiniteParametersRejected) {
  LognormalHead h{{0.0, std::nan("")}, {0.0, 0.0}};
  try {
    h.validate();
    FAIL() << "expected HeadError";
  } catch (const HeadError& e) {
    EXPECT_EQ(e.node(), 1u);
  }
}
