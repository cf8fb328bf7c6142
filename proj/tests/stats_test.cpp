// Copyright 2026 The Nutripipe Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "nutripipe/stats.hpp"

#include <vector>

#include "gtest/gtest.h"
#include "nutripipe/random.hpp"

namespace nutripipe {
namespace {

TEST(ChiSquareTest, ClosedFormExample) {
  const StatResult r = ChiSquare2x2(30, 70, 10, 90);
  EXPECT_NEAR(r.statistic, 12.5, 1e-12);
  EXPECT_NEAR(r.p_value, 0.00040695201744495946, 1e-15);
  EXPECT_EQ(r.method, StatMethod::kChiSquare);
}

TEST(ChiSquareTest, IndependentTableIsZero) {
  const StatResult r = ChiSquare2x2(10, 30, 20, 60);
  EXPECT_DOUBLE_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
}

TEST(ChiSquareTest, ZeroMarginalThrows) {
  try {
    ChiSquare2x2(0, 0, 5, 7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateTable);
  }
  EXPECT_THROW(ChiSquare2x2(0, 3, 0, 7), Error);
  EXPECT_THROW(ChiSquare2x2(-1, 3, 2, 7), Error);
}

TEST(ChiSquareTest, SwapInvariance) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto a = static_cast<std::int64_t>(rng.Index(50)) + 1;
    const auto b = static_cast<std::int64_t>(rng.Index(50)) + 1;
    const auto c = static_cast<std::int64_t>(rng.Index(50)) + 1;
    const auto d = static_cast<std::int64_t>(rng.Index(50)) + 1;
    const double base = ChiSquare2x2(a, b, c, d).statistic;
    EXPECT_NEAR(ChiSquare2x2(d, c, b, a).statistic, base, 1e-9 * (1 + base));
    EXPECT_NEAR(ChiSquare2x2(c, d, a, b).statistic, base, 1e-9 * (1 + base));
    EXPECT_NEAR(ChiSquare2x2(b, a, d, c).statistic, base, 1e-9 * (1 + base));
  }
}

TEST(MidRanksTest, Ties) {
  const std::vector<double> v{10, 20, 10, 30, 20, 20};
  const std::vector<double> expected{1.5, 4, 1.5, 6, 4, 4};
  EXPECT_EQ(MidRanks(v), expected);
}

TEST(MannWhitneyTest, SeparatedSmallSamples) {
  const std::vector<double> x{1, 2, 3}, y{4, 5, 6};
  const StatResult r = MannWhitneyU(x, y);
  EXPECT_DOUBLE_EQ(r.statistic, 0.0);
  EXPECT_NEAR(r.p_value, 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(MannWhitneyU(y, x).statistic, 9.0);
}

TEST(MannWhitneyTest, IdenticalSamples) {
  const std::vector<double> x{3, 1, 4, 1, 5};
  const StatResult r = MannWhitneyU(x, x);
  EXPECT_DOUBLE_EQ(r.statistic, 12.5);
  EXPECT_NEAR(r.p_value, 1.0, 1e-12);
}

TEST(MannWhitneyTest, NormalApproximationMatchesReference) {
  const std::vector<double> x{1.5, 2.0, 2.0, 3.1, 4.0, 4.0, 5.5, 6.0, 7.2, 8.0};
  const std::vector<double> y{2.0, 4.0, 6.5, 7.0, 8.0, 9.1, 9.5, 10.0};
  const StatResult r = MannWhitneyU(x, y);
  EXPECT_DOUBLE_EQ(r.statistic, 17.5);
  EXPECT_NEAR(r.p_value, 0.04954252293742558, 1e-12);
}

TEST(MannWhitneyTest, LargeDisjointSamples) {
  std::vector<double> x, y;
  for (int i = 0; i < 50; ++i) {
    x.push_back(i);
    y.push_back(100 + i);
  }
  EXPECT_LT(MannWhitneyU(x, y).p_value, 0.01);
}

TEST(MannWhitneyTest, EmptyThrows) {
  const std::vector<double> x{1}, empty;
  EXPECT_THROW(MannWhitneyU(x, empty), Error);
}

// Full enumeration of group assignments, independent of the DP.
double EnumeratedPValue(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> pooled(x);
  pooled.insert(pooled.end(), y.begin(), y.end());
  const std::vector<double> ranks = MidRanks(pooled);
  const std::size_t n = pooled.size(), n1 = x.size();
  double observed = 0;
  for (std::size_t i = 0; i < n1; ++i) observed += ranks[i];
  const double center = n1 * (n + 1) / 2.0;
  const double obs_dev = std::abs(observed - center);
  std::size_t extreme = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != n1) continue;
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) sum += ranks[i];
    }
    ++total;
    if (std::abs(sum - center) >= obs_dev - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

TEST(MannWhitneyTest, ExactMatchesEnumeration) {
  Rng rng(11);
  for (std::size_t n1 = 1; n1 <= 11; ++n1) {
    for (std::size_t n2 = 1; n1 + n2 <= 12; ++n2) {
      std::vector<double> x, y;
      for (std::size_t i = 0; i < n1; ++i) x.push_back(static_cast<double>(rng.Index(6)));
      for (std::size_t i = 0; i < n2; ++i) y.push_back(static_cast<double>(rng.Index(6)));
      EXPECT_NEAR(MannWhitneyU(x, y).p_value, EnumeratedPValue(x, y), 1e-12)
          << n1 << "," << n2;
    }
  }
}

TEST(SpearmanTest, Examples) {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 1, 4, 3};
  const StatResult r = SpearmanRho(x, y);
  EXPECT_NEAR(r.statistic, 0.6, 1e-12);
  EXPECT_NEAR(r.p_value, 0.4, 1e-12);
  EXPECT_EQ(r.method, StatMethod::kSpearman);
  const std::vector<double> inc{1, 5, 9, 20}, dec{4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(SpearmanRho(x, inc).statistic, 1.0);
  EXPECT_DOUBLE_EQ(SpearmanRho(x, dec).statistic, -1.0);
}

TEST(SpearmanTest, TiesMatchReference) {
  const std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6, 5, 3};
  const std::vector<double> y{2, 7, 1, 8, 2, 8, 1, 8, 2, 8};
  const StatResult r = SpearmanRho(x, y);
  EXPECT_NEAR(r.statistic, 0.13471506281091267, 1e-12);
  EXPECT_NEAR(r.p_value, 0.7106008805223829, 1e-10);
}

TEST(SpearmanTest, ConstantInputThrows) {
  const std::vector<double> x{1, 2, 3}, c{5, 5, 5};
  try {
    SpearmanRho(x, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroVariance);
  }
  EXPECT_THROW(SpearmanRho(x, std::vector<double>{1, 2}), Error);
}

}  // namespace
}  // namespace nutripipe
