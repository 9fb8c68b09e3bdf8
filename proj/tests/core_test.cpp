#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "pami/core.hpp"
#include "pami/vocabulary.hpp"
#include "support.hpp"

using namespace pami;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next(), b.next());
}

TEST(Rng, DifferentSeedsDiverge) {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next() == b.next();
  EXPECT_EQ(same, 0);
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(3);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  // mean of U(0,1): 0.5 with sd 1/sqrt(12 n)
  EXPECT_NEAR(sum / n, 0.5, 4.0 / std::sqrt(12.0 * n));
}

TEST(Rng, BelowCoversRangeUniformly) {
  Rng r(5);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[r.below(7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 5.0 * std::sqrt(n / 7.0));
  EXPECT_THROW(r.below(0), UsageError);
}

TEST(Rng, RangeIsInclusive) {
  Rng r(9);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(r.range(-1, 1));
  EXPECT_EQ(seen, (std::set<int>{-1, 0, 1}));
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(11);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(w);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(DeriveSeed, NamesAndIdsSeparateStreams) {
  std::set<std::uint64_t> seeds;
  for (const char* name : {"augment", "order", "model", "data"}) {
    for (std::uint64_t e = 0; e < 5; ++e) {
      for (std::uint64_t i = 0; i < 5; ++i) seeds.insert(derive_seed(7, name, e, i));
    }
  }
  EXPECT_EQ(seeds.size(), 4u * 25u);
  EXPECT_EQ(derive_seed(7, "augment", 1, 2), derive_seed(7, "augment", 1, 2));
  EXPECT_NE(derive_seed(7, "augment"), derive_seed(8, "augment"));
}

TEST(Fnv1a, KnownVectors) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(Numeric, SoftplusMatchesDirectFormula) {
  for (double x : {-30.0, -5.0, -1.0, -1e-3, 0.0, 1e-3, 1.0, 5.0, 30.0}) {
    EXPECT_NEAR(softplus(x), oracle::softplus(x), 1e-12 * std::max(1.0, std::abs(x)));
  }
  EXPECT_DOUBLE_EQ(softplus(0.0), kLn2);
  EXPECT_NEAR(softplus(1000.0), 1000.0, 1e-9);
  EXPECT_NEAR(softplus(-1000.0), 0.0, 1e-300);
}

TEST(Numeric, SigmoidIsStableAndSymmetric) {
  for (double x : {-40.0, -3.0, -0.5, 0.0, 0.5, 3.0, 40.0}) {
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15);
    EXPECT_NEAR(sigmoid(x), 1.0 / (1.0 + std::exp(-x)), 1e-15);
  }
  EXPECT_EQ(sigmoid(-1000.0), 0.0);
  EXPECT_EQ(sigmoid(1000.0), 1.0);
}

TEST(Numeric, LogSumExpMatchesDirectSum) {
  const std::vector<double> xs{0.3, -1.2, 2.5, 0.0};
  double s = 0.0;
  for (double x : xs) s += std::exp(x);
  EXPECT_NEAR(log_sum_exp(xs), std::log(s), 1e-14);
  const std::vector<double> big{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(big), 1000.0 + kLn2, 1e-12);
}

TEST(Numeric, SoftmaxProperties) {
  Rng r(13);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> xs(1 + r.below(10));
    for (double& x : xs) x = r.uniform(-20.0, 20.0);
    const auto p = softmax(xs);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    const auto lp = log_softmax(xs);
    for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(std::exp(lp[i]), p[i], 1e-12);
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) EXPECT_EQ(xs[i] < xs[i + 1], p[i] < p[i + 1]);
  }
  EXPECT_TRUE(softmax(std::vector<double>{}).empty());
  const auto p = softmax(std::vector<double>{1e6, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 1.0);
}

TEST(Numeric, AllFinite) {
  EXPECT_TRUE(all_finite(std::vector<double>{0.0, 1.0}));
  EXPECT_FALSE(all_finite(std::vector<double>{0.0, NAN}));
  EXPECT_FALSE(all_finite(std::vector<double>{INFINITY}));
}

TEST(Vocabulary, SizeAndNames) {
  EXPECT_EQ(kVocabSize, 40);
  EXPECT_EQ(token_name(tok::kYes), "yes");
  EXPECT_EQ(token_name(symbol_token(3)), "sym3");
  EXPECT_EQ(render_tokens({tok::kRed, tok::kBig}), "red big");
  EXPECT_THROW(token_name(40), InputError);
  EXPECT_THROW(symbol_token(tok::kMaxSymbols), InputError);
}

TEST(Vocabulary, AttributeTokensAreDistinct) {
  std::set<std::pair<Token, Token>> seen;
  for (int a = 0; a < kMaxAttributes; ++a) seen.insert(attribute_tokens(a));
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(kMaxAttributes));
  EXPECT_THROW(attribute_tokens(kMaxAttributes), InputError);
}

TEST(Errors, ConfigErrorCarriesKey) {
  try {
    throw ConfigError("bad", "train.beta");
  } catch (const Error& e) {
    EXPECT_EQ(dynamic_cast<const ConfigError&>(e).key(), "train.beta");
  }
}
