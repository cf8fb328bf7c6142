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
#include <string>
#include <vector>

#include "nutripipe/error.hpp"
#include "nutripipe/hash.hpp"
#include "nutripipe/parallel.hpp"
#include "nutripipe/random.hpp"

namespace nutripipe {

namespace detail {

inline void CheckScoresAndLabels(std::span<const double> scores,
                                 std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::kInvalidArgument, "scores and labels differ in length");
  }
  std::size_t pos = 0;
  for (auto y : labels) {
    if (y > 1) throw Error(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
    pos += y;
  }
  if (pos == 0 || pos == labels.size()) {
    throw Error(ErrorCode::kSingleClassInput, "ROC-AUC needs both classes");
  }
}

// Groups of tied scores in ascending score order; each group lists row indices.
inline std::vector<std::vector<std::uint32_t>> TieGroups(std::span<const double> scores) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });
  std::vector<std::vector<std::uint32_t>> groups;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k == 0 || scores[order[k]] != scores[order[k - 1]]) groups.emplace_back();
    groups.back().push_back(order[k]);
  }
  return groups;
}

// Weighted Mann-Whitney AUC over presorted tie groups.
inline double GroupedAuc(const std::vector<std::vector<std::uint32_t>>& groups,
                         std::span<const std::uint8_t> labels,
                         std::span<const std::uint32_t> weight) {
  double negatives_below = 0.0, u = 0.0, pos_total = 0.0, neg_total = 0.0;
  for (const auto& group : groups) {
    double p = 0.0, n = 0.0;
    for (std::uint32_t i : group) {
      const double w = weight.empty() ? 1.0 : static_cast<double>(weight[i]);
      (labels[i] ? p : n) += w;
    }
    u += p * negatives_below + 0.5 * p * n;
    negatives_below += n;
    pos_total += p;
    neg_total += n;
  }
  return u / (pos_total * neg_total);
}

}  // namespace detail

// Probability that a random positive outranks a random negative; ties
// count one half.
inline double RocAuc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::CheckScoresAndLabels(scores, labels);
  return detail::GroupedAuc(detail::TieGroups(scores), labels, {});
}

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
};

// Linear interpolation between order statistics at position q (n - 1).
inline double PercentileInterpolated(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kEmptySample, "no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

struct BootstrapResult {
  ConfidenceInterval interval;
  std::vector<double> aucs;  // one per resample, resample order
  std::size_t redraws = 0;
};

// Percentile bootstrap of ROC-AUC. Resample b draws from its own generator,
// so the result does not depend on the worker count. Single-class
// resamples are redrawn; more than 10 * n_bootstrap redraws in total is an
// error.
inline BootstrapResult BootstrapAuc(std::span<const double> scores,
                                    std::span<const std::uint8_t> labels,
                                    std::size_t n_bootstrap = 1000, double level = 0.95,
                                    std::uint64_t seed = 0) {
  detail::CheckScoresAndLabels(scores, labels);
  if (n_bootstrap == 0) throw Error(ErrorCode::kInvalidArgument, "n_bootstrap must be >= 1");
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "level must lie in (0,1)");
  }
  const auto groups = detail::TieGroups(scores);
  const std::size_t n = scores.size();
  const std::size_t cap = 10 * n_bootstrap;
  const std::uint64_t base = DeriveSeed(seed, "bootstrap");
  BootstrapResult result;
  result.aucs.resize(n_bootstrap);
  std::vector<std::size_t> redraws(n_bootstrap, 0);
  ParallelFor(n_bootstrap, [&](std::size_t b) {
    Rng rng(base + b);
    std::vector<std::uint32_t> weight(n);
    while (true) {
      std::fill(weight.begin(), weight.end(), 0u);
      std::size_t pos = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const auto i = static_cast<std::size_t>(rng.Index(n));
        ++weight[i];
        pos += labels[i];
      }
      if (pos > 0 && pos < n) break;
      if (++redraws[b] > cap) return;
    }
    result.aucs[b] = detail::GroupedAuc(groups, labels, weight);
  });
  result.redraws = std::accumulate(redraws.begin(), redraws.end(), std::size_t{0});
  if (result.redraws > cap) {
    throw Error(ErrorCode::kResampleExhaustion,
                "bootstrap exceeded " + std::to_string(cap) + " single-class redraws");
  }
  const double tail = (1.0 - level) / 2.0;
  result.interval.low = PercentileInterpolated(result.aucs, tail);
  result.interval.high = PercentileInterpolated(result.aucs, 1.0 - tail);
  return result;
}

inline ConfidenceInterval BootstrapCi(std::span<const double> scores,
                                      std::span<const std::uint8_t> labels,
                                      std::size_t n_bootstrap = 1000, double level = 0.95,
                                      std::uint64_t seed = 0) {
  return BootstrapAuc(scores, labels, n_bootstrap, level, seed).interval;
}

}  // namespace nutripipe
