#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "gvim/parallel.hpp"
#include "gvim/rng.hpp"

using namespace gvim;

// Published Philox4x32-10 known-answer vectors.
TEST(Philox, KnownAnswerZero) {
  const auto out = detail::philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = detail::philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                         {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out, (std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi) {
  const auto out = detail::philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                         {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out, (std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(RngStream, SameSeedSameSequence) {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStream, DistinctStreamsDiffer) {
  RngStream a(42, 7), b(42, 8), c(43, 7);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    same_ab += x == b.next_u64();
    same_ac += x == c.next_u64();
  }
  EXPECT_EQ(same_ab, 0);
  EXPECT_EQ(same_ac, 0);
}

TEST(RngStream, ChildrenAreDeterministicAndDistinct) {
  const RngStream root(5, 0);
  auto c1 = root.child(3), c2 = root.child(3), c3 = root.child(4);
  const RngStream other(5, 1);
  auto c4 = other.child(3);
  std::set<std::uint64_t> firsts;
  EXPECT_EQ(c1.next_u64(), c2.next_u64());
  firsts.insert(root.child(3).next_u64());
  firsts.insert(c3.next_u64());
  firsts.insert(c4.next_u64());
  EXPECT_EQ(firsts.size(), 3u);
}

TEST(RngStream, UniformRangeAndMoments) {
  RngStream r(1, 0);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sum2 += u * u;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(sum2 / n - mean * mean, 1.0 / 12.0, 0.002);
}

TEST(RngStream, NormalMoments) {
  RngStream r(2, 0);
  const int n = 200000;
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s1 += z;
    s2 += z * z;
    s3 += z * z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
  EXPECT_NEAR(s3 / n, 0.0, 0.05);
  EXPECT_NEAR(s4 / n, 3.0, 0.08);
}

TEST(RngStream, BoundedIsUniformOverSmallRange) {
  RngStream r(3, 0);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto k = r.bounded(7);
    ASSERT_LT(k, 7u);
    ++counts[k];
  }
  // Chi-square with 6 degrees of freedom; 22.46 is the 0.999 quantile.
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
  EXPECT_LT(chi2, 22.46);
  EXPECT_EQ(r.bounded(1), 0u);
  EXPECT_EQ(r.bounded(0), 0u);
}

TEST(RngStream, ShuffleIsPermutation) {
  RngStream r(4, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> v(1 + trial);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    r.shuffle(std::span<int>(w));
    auto sorted = w;
    std::sort(sorted.begin(), sorted.end());
    ASSERT_EQ(sorted, v);
  }
}

TEST(RngStream, ShuffleAllOrdersOfThreeEquallyLikely) {
  RngStream r(6, 0);
  std::map<std::vector<int>, int> counts;
  for (int i = 0; i < 60000; ++i) {
    std::vector<int> v{0, 1, 2};
    r.shuffle(std::span<int>(v));
    ++counts[v];
  }
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [perm, c] : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(RngStream, CategoricalFrequencies) {
  RngStream r(8, 0);
  const std::array<double, 3> p{0.2, 0.5, 0.3};
  std::array<int, 3> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[r.categorical(p)];
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(counts[k] / double(n), p[k], 0.006);
}

TEST(ParallelFor, ResultsIndependentOfThreadCount) {
  auto run = [](unsigned threads) {
    std::vector<double> out(257);
    parallel_for(out.size(), threads, [&](std::size_t i) {
      RngStream s = RngStream(9, 0).child(i);
      double acc = 0;
      for (int k = 0; k < 100; ++k) acc += s.normal();
      out[i] = acc;
    });
    return out;
  };
  EXPECT_EQ(run(1), run(8));
}

TEST(ParallelFor, LowestIndexExceptionWins) {
  for (unsigned threads : {1u, 4u}) {
    try {
      parallel_for(100, threads, [](std::size_t i) {
        if (i == 17 || i == 60) throw std::runtime_error(std::to_string(i));
      });
      FAIL() << "expected an exception";
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "17");
    }
  }
}
