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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "nutripipe/error.hpp"

namespace nutripipe {

enum class StatMethod { kMannWhitneyU, kSpearman, kChiSquare };

inline std::string_view StatMethodName(StatMethod m) {
  switch (m) {
    case StatMethod::kMannWhitneyU: return "MannWhitneyU";
    case StatMethod::kSpearman: return "Spearman";
    case StatMethod::kChiSquare: return "ChiSquare";
  }
  return "";
}

struct StatResult {
  double statistic = 0.0;
  double p_value = 1.0;
  StatMethod method = StatMethod::kChiSquare;
};

// Pearson chi-square for the 2x2 table [[a, b], [c, d]], one degree of
// freedom, no continuity correction.
inline StatResult ChiSquare2x2(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
  if (a < 0 || b < 0 || c < 0 || d < 0) {
    throw Error(ErrorCode::kInvalidArgument, "negative contingency count");
  }
  const std::int64_t r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
  if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) {
    throw Error(ErrorCode::kDegenerateTable, "contingency table has a zero marginal");
  }
  const double n = static_cast<double>(r1 + r2);
  const double cross = static_cast<double>(a) * static_cast<double>(d) -
                       static_cast<double>(b) * static_cast<double>(c);
  const double chi2 = n * cross * cross /
                      (static_cast<double>(r1) * static_cast<double>(r2) *
                       static_cast<double>(c1) * static_cast<double>(c2));
  StatResult r{chi2, 1.0, StatMethod::kChiSquare};
  if (chi2 > 0.0) {
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), chi2));
  }
  return r;
}

// 1-based ranks with ties sharing the mean rank.
inline std::vector<double> MidRanks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

inline constexpr std::size_t kMannWhitneyExactLimit = 12;

namespace detail {

// Exact two-sided permutation p-value of the rank-sum statistic. Doubled
// midranks are integers, so subset sums are counted exactly by DP.
inline double ExactRankSumPValue(const std::vector<std::int64_t>& doubled_ranks, std::size_t n1,
                                 std::int64_t observed_sum) {
  const std::size_t n = doubled_ranks.size();
  std::int64_t total = 0;
  for (auto r : doubled_ranks) total += r;
  // ways[k][s]: subsets of size k with doubled-rank sum s.
  std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(total + 1, 0.0));
  ways[0][0] = 1.0;
  for (std::size_t item = 0; item < n; ++item) {
    const std::int64_t r = doubled_ranks[item];
    for (std::size_t k = std::min(n1, item + 1); k >= 1; --k) {
      for (std::int64_t s = total; s >= r; --s) ways[k][s] += ways[k - 1][s - r];
    }
  }
  const std::int64_t center = static_cast<std::int64_t>(n1 * (n + 1));  // 2 * E[R1]
  const std::int64_t observed_dev = std::llabs(observed_sum - center);
  double extreme = 0.0, all = 0.0;
  for (std::int64_t s = 0; s <= total; ++s) {
    all += ways[n1][s];
    if (std::llabs(s - center) >= observed_dev) extreme += ways[n1][s];
  }
  return std::min(1.0, extreme / all);
}

}  // namespace detail

// U is reported for x: U = R_x - n_x (n_x + 1) / 2 with midranks. p is
// two-sided; exact permutation distribution when n_x + n_y <= 12, otherwise
// the normal approximation with tie and continuity corrections.
inline StatResult MannWhitneyU(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "Mann-Whitney needs two non-empty samples");
  }
  const std::size_t n1 = x.size(), n2 = y.size(), n = n1 + n2;
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  const std::vector<double> ranks = MidRanks(pooled);
  std::vector<std::int64_t> doubled(n);
  std::int64_t doubled_sum_x = 0;
  for (std::size_t i = 0; i < n; ++i) {
    doubled[i] = std::llround(2.0 * ranks[i]);
    if (i < n1) doubled_sum_x += doubled[i];
  }
  const double u = 0.5 * static_cast<double>(doubled_sum_x) -
                   0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
  StatResult result{u, 1.0, StatMethod::kMannWhitneyU};
  if (n <= kMannWhitneyExactLimit) {
    result.p_value = detail::ExactRankSumPValue(doubled, n1, doubled_sum_x);
    return result;
  }
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double nd = static_cast<double>(n);
  const double mean = 0.5 * static_cast<double>(n1) * static_cast<double>(n2);
  const double variance = static_cast<double>(n1) * static_cast<double>(n2) / 12.0 *
                          ((nd + 1.0) - tie_term / (nd * (nd - 1.0)));
  if (variance <= 0.0) return result;  // all values tied
  const double z = std::max(0.0, std::abs(u - mean) - 0.5) / std::sqrt(variance);
  result.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return result;
}

// Pearson correlation of midranks; p from Student's t with n - 2 dof.
inline StatResult SpearmanRho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "Spearman needs paired samples of size >= 2");
  }
  const std::vector<double> rx = MidRanks(x), ry = MidRanks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorCode::kZeroVariance, "Spearman input is constant");
  }
  const double rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  StatResult result{rho, 1.0, StatMethod::kSpearman};
  if (x.size() > 2) {
    if (std::abs(rho) >= 1.0) {
      result.p_value = 0.0;
    } else {
      const double dof = n - 2.0;
      const double t = rho * std::sqrt(dof / (1.0 - rho * rho));
      result.p_value = 2.0 * boost::math::cdf(boost::math::complement(
                                 boost::math::students_t(dof), std::abs(t)));
      result.p_value = std::min(1.0, result.p_value);
    }
  }
  return result;
}

}  // namespace nutripipe
