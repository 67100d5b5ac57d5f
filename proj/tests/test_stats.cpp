#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "duet/stats.hpp"
#include "oracles.hpp"

using namespace duet;

TEST(Stats, SymmetricColumn) {
  auto s = column_stats({1, 2, 3});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_NEAR(s.std, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_DOUBLE_EQ(s.skewness, 0.0);
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 3.0);
  EXPECT_EQ(s.distinct_count, 3u);
}

TEST(Stats, PerfectCorrelation) {
  std::vector<double> a{1, 5, 2, 8, 3}, b;
  for (double x : a) b.push_back(2 * x);
  auto s = summarize(FeatureTable::from_columns({"a", "b", "c"}, {a, b, {0, 1, 0, 1, 0}}));
  ASSERT_FALSE(s.space.top_pairs.empty());
  EXPECT_EQ(s.space.top_pairs[0].i, 0u);
  EXPECT_EQ(s.space.top_pairs[0].j, 1u);
  EXPECT_NEAR(s.space.top_pairs[0].abs_r, 1.0, 1e-12);
}

TEST(Stats, MatchesTwoPassOracle) {
  std::mt19937_64 rng(17);
  std::exponential_distribution<double> ex(0.5);
  for (int trial = 0; trial < 20; ++trial) {
    auto cols = oracle::random_columns(rng, 100, 6);
    for (auto& v : cols[5]) v = ex(rng);  // skewed column
    auto s = summarize(FeatureTable::from_columns({"a", "b", "c", "d", "e", "f"}, cols));
    for (std::size_t c = 0; c < 6; ++c) {
      auto o = oracle::naive_stats(cols[c]);
      EXPECT_NEAR(s.features[c].mean, o.mean, 1e-9);
      EXPECT_NEAR(s.features[c].std, o.std, 1e-9);
      EXPECT_NEAR(s.features[c].skewness, o.skew, 1e-9);
      EXPECT_EQ(s.features[c].min, *std::min_element(cols[c].begin(), cols[c].end()));
      for (std::size_t d = 0; d < 6; ++d) {
        double want = c == d ? 1.0 : oracle::naive_abs_r(cols[c], cols[d]);
        EXPECT_NEAR(s.space.abs_correlation[c][d], want, 1e-9);
      }
    }
  }
}

TEST(Stats, Invariants) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    auto cols = oracle::random_columns(rng, 40, 5);
    cols[2].assign(40, 3.25);
    auto s = summarize(FeatureTable::from_columns({"a", "b", "c", "d", "e"}, cols));
    for (std::size_t c = 0; c < 5; ++c) {
      const auto& f = s.features[c];
      EXPECT_GE(f.std, 0.0);
      EXPECT_LE(f.min, f.mean);
      EXPECT_LE(f.mean, f.max);
      EXPECT_GE(f.distinct_count, 1u);
      for (std::size_t d = 0; d < 5; ++d) {
        EXPECT_EQ(s.space.abs_correlation[c][d], s.space.abs_correlation[d][c]);
        EXPECT_GE(s.space.abs_correlation[c][d], 0.0);
        EXPECT_LE(s.space.abs_correlation[c][d], 1.0);
      }
      EXPECT_EQ(s.space.abs_correlation[c][c], 1.0);
    }
    EXPECT_EQ(s.features[2].skewness, 0.0);
    EXPECT_EQ(s.space.abs_correlation[2][0], 0.0);
    EXPECT_EQ(s.space.low_variance, (std::vector<std::size_t>{2}));
    for (std::size_t k = 1; k < s.space.top_pairs.size(); ++k) {
      EXPECT_GE(s.space.top_pairs[k - 1].abs_r, s.space.top_pairs[k].abs_r);
    }
  }
}

TEST(Stats, RowPermutationInvariant) {
  std::mt19937_64 rng(8);
  auto cols = oracle::random_columns(rng, 73, 4);
  auto base = summarize(FeatureTable::from_columns({"a", "b", "c", "d"}, cols));
  std::vector<std::size_t> perm(73);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permuted = FeatureTable::from_columns({"a", "b", "c", "d"}, cols).select_rows(perm);
    EXPECT_EQ(summarize(permuted), base);  // bit-identical
  }
}

TEST(RenderStats, DeterministicAndConstantFlag) {
  auto t = FeatureTable::from_columns({"a", "b"}, {{1, 2, 3, 4}, {7, 7, 7, 7}});
  auto s = summarize(t);
  std::string a = render_stats(s), b = render_stats(summarize(t));
  EXPECT_EQ(a, b);
  std::istringstream in(a);
  std::string line;
  bool flagged = false;
  while (std::getline(in, line)) {
    EXPECT_LE(line.size(), 120u);
    if (line.rfind("f2 ", 0) == 0) flagged = line.find("constant") != std::string::npos;
    if (line.rfind("f1 ", 0) == 0) EXPECT_EQ(line.find("constant"), std::string::npos);
  }
  EXPECT_TRUE(flagged);
  EXPECT_NE(a.find("low variance: f2"), std::string::npos);
}

TEST(RenderStats, PairCap) {
  std::mt19937_64 rng(4);
  std::vector<std::string> names;
  for (int i = 0; i < 20; ++i) names.push_back("c" + std::to_string(i));
  auto s = summarize(FeatureTable::from_columns(names, oracle::random_columns(rng, 50, 20)));
  EXPECT_EQ(s.space.top_pairs.size(), 10u);
  std::string text = render_stats(s);
  auto pos = text.find("most correlated pairs:\n");
  auto end = text.find("low variance:");
  std::string block = text.substr(pos, end - pos);
  EXPECT_EQ(std::count(block.begin(), block.end(), '~'), 10);
}

TEST(RenderStats, FourSignificantDigits) {
  auto s = summarize(FeatureTable::from_columns({"a"}, {{1.0, 2.0, 3.123456}}));
  EXPECT_NE(render_stats(s).find("max=3.123 "), std::string::npos);
}
