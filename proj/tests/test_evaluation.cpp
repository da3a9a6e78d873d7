#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gvssm/errors.hpp"
#include "gvssm/evaluation.hpp"
#include "gvssm/random.hpp"

using namespace gvssm;

namespace {

std::vector<double> random_composition(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  for (double& v : p) v = std::exp(1.5 * rng.next_gaussian());
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= s;
  return p;
}

// Double loop over ordered pairs, written independently of the library.
double pairwise_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t k = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double d = std::log(a[i] / a[j]) - std::log(b[i] / b[j]);
      s += d * d;
    }
  return std::sqrt(s / (2.0 * static_cast<double>(k)));
}

}  // namespace

TEST(Aitchison, TwoPartUnitValue) {
  const std::vector<double> a{0.5, 0.5}, b{0.8, 0.2};
  EXPECT_NEAR(aitchison_distance(a, b), 0.9803, 1e-3);
  EXPECT_NEAR(aitchison_distance(a, b), std::log(4.0) / std::sqrt(2.0), 1e-12);
}

TEST(Aitchison, MatchesPairwiseOracle) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.next_below(5);
    const auto a = random_composition(rng, k), b = random_composition(rng, k);
    EXPECT_NEAR(aitchison_distance(a, b), pairwise_oracle(a, b), 1e-10);
  }
}

TEST(Aitchison, MetricPropertiesOnRandomPairs) {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 4;
    auto a = random_composition(rng, k), b = random_composition(rng, k);
    const double d = aitchison_distance(a, b);
    EXPECT_GE(d, 0.0);
    EXPECT_NEAR(aitchison_distance(a, a), 0.0, 1e-12);
    EXPECT_NEAR(aitchison_distance(b, a), d, 1e-12);

    std::vector<double> sa = a, sb = b;
    const double ca = 0.1 + 10.0 * rng.next_unit(), cb = 0.1 + 10.0 * rng.next_unit();
    for (double& v : sa) v *= ca;
    for (double& v : sb) v *= cb;
    EXPECT_NEAR(aitchison_distance(sa, sb), d, 1e-10);

    std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<double> pa(k), pb(k);
    for (std::size_t j = 0; j < k; ++j) {
      pa[j] = a[perm[j]];
      pb[j] = b[perm[j]];
    }
    EXPECT_NEAR(aitchison_distance(pa, pb), d, 1e-10);
  }
}

TEST(Aitchison, ZerosClampedAtFloor) {
  const std::vector<double> a{1.0, 0.0}, b{0.5, 0.5};
  const std::vector<double> c{1.0, kCompositionClamp};
  EXPECT_DOUBLE_EQ(aitchison_distance(a, b), aitchison_distance(c, b));
  EXPECT_TRUE(std::isfinite(aitchison_distance(a, b)));
}

TEST(Aitchison, SupportRestrictsClasses) {
  const std::vector<double> a{0.5, 0.3, 0.2}, b{0.2, 0.3, 0.5};
  const std::vector<std::uint8_t> s{1, 1, 0};
  const std::vector<double> a2{0.5, 0.3}, b2{0.2, 0.3};
  EXPECT_NEAR(aitchison_distance(a, b, s), pairwise_oracle(a2, b2), 1e-12);
  const std::vector<std::uint8_t> single{0, 1, 0};
  try {
    aitchison_distance(a, b, single, 7);
    FAIL() << "expected SupportError";
  } catch (const SupportError& e) {
    EXPECT_EQ(e.pixel(), 7u);
  }
}

TEST(Aitchison, SharedSupport) {
  const std::vector<double> a{0.5, 0.0, 0.5}, b{0.3, 0.3, 0.4};
  EXPECT_EQ(shared_support(a, b), (std::vector<std::uint8_t>{1, 0, 1}));
  const std::vector<std::uint8_t> allowed{0, 1, 1};
  EXPECT_EQ(shared_support(a, b, allowed), (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(DistanceMap, MeanOverValidAndExcludedCounted) {
  // Three pixels, two classes, layout [class][pixel].
  const std::vector<double> prior{0.5, 0.5, 1.0, 0.5, 0.5, 0.0};
  const std::vector<double> post{0.8, 0.5, 0.7, 0.2, 0.5, 0.3};
  const std::vector<std::uint8_t> valid{1, 1, 1};
  const DistanceMap m = mean_distance_map(prior, post, 2, valid);
  EXPECT_EQ(m.evaluated, 2u);
  EXPECT_EQ(m.excluded_singleton, 1u);
  ASSERT_TRUE(m.mean.has_value());
  EXPECT_NEAR(*m.mean, 0.5 * std::log(4.0) / std::sqrt(2.0), 1e-12);
  EXPECT_TRUE(std::isnan(m.per_pixel[2]));

  const std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_FALSE(mean_distance_map(prior, post, 2, none).mean.has_value());
}

TEST(RatioSeries, HandValues) {
  const DistanceSeries s{{1, 2.0}, {2, 4.0}, {3, 6.0}};
  const auto r = ratio_to_baseline(s, 1);
  EXPECT_EQ(r.at(1), 1.0);
  EXPECT_EQ(r.at(2), 2.0);
  EXPECT_EQ(r.at(3), 3.0);
  const auto r2 = ratio_to_baseline(s, 2);
  EXPECT_EQ(r2.at(1), 0.5);
  EXPECT_EQ(r2.at(2), 1.0);
  EXPECT_EQ(r2.at(3), 1.5);
}

TEST(RatioSeries, BaselineEntryIsExactlyOne) {
  Rng rng(13);
  DistanceSeries s;
  for (int t = 1; t <= 6; ++t) s[t] = 0.01 + rng.next_unit();
  for (int b = 1; b <= 6; ++b) EXPECT_EQ(ratio_to_baseline(s, b).at(b), 1.0);
}

TEST(RatioSeries, UndefinedBaselines) {
  EXPECT_THROW(ratio_to_baseline({{1, 0.0}, {2, 1.0}}, 1), UndefinedRatioError);
  EXPECT_THROW(ratio_to_baseline({{2, 1.0}}, 1), UndefinedRatioError);
  EXPECT_THROW(ratio_to_baseline({{1, std::numeric_limits<double>::quiet_NaN()}}, 1), UndefinedRatioError);
}
