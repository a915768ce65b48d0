#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fellas/rng.hpp"

using fellas::Rng;

TEST(Rng, DeterministicAcrossInstances) {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(124);
  EXPECT_NE(Rng(123).next_u64(), c.next_u64());
}

TEST(Rng, UniformInUnitInterval) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, BelowIsBoundedAndRoughlyUniform) {
  Rng rng(9);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 5.0 * std::sqrt(n / 7.0));
  EXPECT_THROW(rng.below(0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, GammaIntMoments) {
  // Gamma(3, 2): mean 1.5, variance 0.75
  Rng rng(13);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rng.gamma_int(3, 2.0);
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  EXPECT_NEAR(mean, 1.5, 0.01);
  EXPECT_NEAR(sq / n - mean * mean, 0.75, 0.02);
}

TEST(Rng, StreamSeparation) {
  auto a = fellas::stream_seed(42, "neg", 1, 2);
  auto b = fellas::stream_seed(42, "neg", 1, 3);
  auto c = fellas::stream_seed(42, "priv", 1, 2);
  auto d = fellas::stream_seed(43, "neg", 1, 2);
  EXPECT_NE(a, b);
  EXPECT_NE(a, c);
  EXPECT_NE(a, d);
  EXPECT_EQ(a, fellas::stream_seed(42, "neg", 1, 2));
}

TEST(Rng, ShuffleIsDeterministicPermutation) {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i;
  auto w = v;
  Rng a(5), b(5);
  a.shuffle(v);
  b.shuffle(w);
  EXPECT_EQ(v, w);
  std::sort(w.begin(), w.end());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(w[static_cast<std::size_t>(i)], i);
}

TEST(Rng, FillNormalMatchesLength) {
  Rng rng(3);
  std::vector<double> v(7);
  rng.fill_normal(v);
  for (double x : v) EXPECT_TRUE(std::isfinite(x));
}
