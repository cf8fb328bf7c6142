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
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nutripipe/csv.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/features.hpp"
#include "nutripipe/gbt.hpp"
#include "nutripipe/hash.hpp"
#include "nutripipe/parallel.hpp"
#include "nutripipe/random.hpp"
#include "nutripipe/strings.hpp"

namespace nutripipe {

inline constexpr std::size_t kMaxExactFeatures = 15;
inline constexpr std::size_t kDefaultPermutations = 2000;
inline constexpr std::size_t kDefaultBackgroundSize = 100;

enum class ExplainMode { kExact, kSampled };

inline std::string_view ExplainModeName(ExplainMode m) {
  return m == ExplainMode::kExact ? "exact" : "sample";
}

// Contributions are in margin (log-odds) units.
struct Explanation {
  std::string instance_id;
  std::vector<std::string> feature_names;
  std::vector<double> feature_values;
  std::vector<double> phi;
  std::vector<double> standard_error;  // sampled mode only
  double base_value = 0.0;
  double prediction_margin = 0.0;
  ExplainMode mode = ExplainMode::kExact;
};

namespace detail {

inline void CheckExplainInputs(const TrainedModel& model, std::span<const double> x,
                               const Matrix& background) {
  if (background.rows == 0) throw Error(ErrorCode::kEmptyBackground, "background set is empty");
  if (x.size() != model.width() || background.cols != model.width()) {
    throw Error(ErrorCode::kFeatureMaskMismatch, "instance or background width differs from model");
  }
}

// Features referenced by at least one split, ascending. Every other
// feature is a dummy player with zero contribution.
inline std::vector<std::size_t> UsedFeatures(const TrainedModel& model) {
  std::vector<char> used(model.width(), 0);
  for (const Tree& t : model.trees) {
    for (const TreeNode& n : t.nodes) {
      if (!n.is_leaf()) used[static_cast<std::size_t>(n.feature)] = 1;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < used.size(); ++j) {
    if (used[j]) out.push_back(j);
  }
  return out;
}

inline double BackgroundMean(const TrainedModel& model, const Matrix& background) {
  double sum = 0.0;
  for (std::size_t b = 0; b < background.rows; ++b) sum += model.Margin(background.Row(b));
  return sum / static_cast<double>(background.rows);
}

inline Explanation Skeleton(const TrainedModel& model, std::span<const double> x,
                            std::string id, ExplainMode mode) {
  Explanation e;
  e.instance_id = std::move(id);
  e.feature_names = model.feature_names;
  e.feature_values.assign(x.begin(), x.end());
  e.phi.assign(x.size(), 0.0);
  e.prediction_margin = model.Margin(x);
  e.mode = mode;
  return e;
}

}  // namespace detail

// Interventional Shapley values by enumerating every coalition of the
// features the model uses: v(S) is the mean margin over background rows
// with the features in S taken from x.
inline Explanation ShapleyExact(const TrainedModel& model, std::span<const double> x,
                                const Matrix& background, std::string instance_id = "") {
  detail::CheckExplainInputs(model, x, background);
  if (x.size() > kMaxExactFeatures) {
    throw Error(ErrorCode::kTooManyFeatures,
                std::to_string(x.size()) + " features exceed the exact limit of " +
                    std::to_string(kMaxExactFeatures));
  }
  Explanation e = detail::Skeleton(model, x, std::move(instance_id), ExplainMode::kExact);
  const std::vector<std::size_t> used = detail::UsedFeatures(model);
  const std::size_t u = used.size();
  const std::size_t masks = std::size_t{1} << u;
  std::vector<double> value(masks, 0.0);
  std::vector<double> z(x.size());
  for (std::size_t mask = 0; mask < masks; ++mask) {
    double sum = 0.0;
    for (std::size_t b = 0; b < background.rows; ++b) {
      const auto row = background.Row(b);
      std::copy(row.begin(), row.end(), z.begin());
      for (std::size_t k = 0; k < u; ++k) {
        if (mask >> k & 1) z[used[k]] = x[used[k]];
      }
      sum += model.Margin(z);
    }
    value[mask] = sum / static_cast<double>(background.rows);
  }
  e.base_value = value[0];
  // weight[s] = s! (u - s - 1)! / u!
  std::vector<double> weight(u, 0.0);
  for (std::size_t s = 0; s < u; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s) + 1) +
                         std::lgamma(static_cast<double>(u - s)) -
                         std::lgamma(static_cast<double>(u) + 1));
  }
  for (std::size_t k = 0; k < u; ++k) {
    const std::size_t bit = std::size_t{1} << k;
    double phi = 0.0;
    for (std::size_t mask = 0; mask < masks; ++mask) {
      if (mask & bit) continue;
      phi += weight[static_cast<std::size_t>(std::popcount(mask))] *
             (value[mask | bit] - value[mask]);
    }
    e.phi[used[k]] = phi;
  }
  return e;
}

// Permutation sampling. Sample t uses a fresh random feature order and
// background row t mod |background|, so every row is used equally often and
// base_value + sum(phi) equals the margin whenever n_permutations is a
// multiple of the background size. The standard error of each phi is the
// sample standard deviation of its marginal contributions over sqrt(n).
inline Explanation ShapleySampled(const TrainedModel& model, std::span<const double> x,
                                  const Matrix& background,
                                  std::size_t n_permutations = kDefaultPermutations,
                                  std::uint64_t seed = 0, std::string instance_id = "") {
  detail::CheckExplainInputs(model, x, background);
  if (n_permutations < 2) throw Error(ErrorCode::kInvalidArgument, "need >= 2 permutations");
  Explanation e = detail::Skeleton(model, x, std::move(instance_id), ExplainMode::kSampled);
  e.standard_error.assign(x.size(), 0.0);
  e.base_value = detail::BackgroundMean(model, background);
  std::vector<std::size_t> order = detail::UsedFeatures(model);
  const std::size_t u = order.size();
  std::vector<double> mean(u, 0.0), m2(u, 0.0);
  std::vector<std::size_t> slot(x.size(), 0);
  for (std::size_t k = 0; k < u; ++k) slot[order[k]] = k;
  Rng rng(seed);
  std::vector<double> z(x.size());
  for (std::size_t t = 0; t < n_permutations; ++t) {
    rng.Shuffle(order);
    const auto row = background.Row(t % background.rows);
    std::copy(row.begin(), row.end(), z.begin());
    double previous = model.Margin(z);
    const double count = static_cast<double>(t + 1);
    for (std::size_t f : order) {
      z[f] = x[f];
      const double current = model.Margin(z);
      const double delta = current - previous;
      previous = current;
      // Welford update.
      const std::size_t k = slot[f];
      const double shift = delta - mean[k];
      mean[k] += shift / count;
      m2[k] += shift * (delta - mean[k]);
    }
  }
  std::sort(order.begin(), order.end());
  const double n = static_cast<double>(n_permutations);
  for (std::size_t k = 0; k < u; ++k) {
    const std::size_t f = order[k];
    e.phi[f] = mean[slot[f]];
    e.standard_error[f] = std::sqrt(std::max(0.0, m2[slot[f]] / (n - 1.0)) / n);
  }
  return e;
}

struct ExplainOptions {
  ExplainMode mode = ExplainMode::kExact;
  bool auto_mode = true;  // exact when the width allows, else sampled
  std::size_t n_permutations = kDefaultPermutations;
  std::uint64_t seed = 0;
};

// Explains every row of `instances`; the sampled seed for row i is derived
// from (seed, instance id), so results do not depend on the worker count.
inline std::vector<Explanation> ExplainRows(const TrainedModel& model, const Dataset& instances,
                                            const Matrix& background,
                                            const ExplainOptions& options = {}) {
  CheckModelMatches(model, instances);
  ExplainMode mode = options.mode;
  if (options.auto_mode) {
    mode = instances.width() <= kMaxExactFeatures ? ExplainMode::kExact : ExplainMode::kSampled;
  }
  std::vector<Explanation> out(instances.size());
  ParallelFor(instances.size(), [&](std::size_t i) {
    const std::string id = i < instances.ids.size() ? instances.ids[i] : std::to_string(i);
    if (mode == ExplainMode::kExact) {
      out[i] = ShapleyExact(model, instances.x.Row(i), background, id);
    } else {
      out[i] = ShapleySampled(model, instances.x.Row(i), background, options.n_permutations,
                              DeriveSeed(options.seed, "explain/" + id), id);
    }
  });
  return out;
}

// Seeded sample of up to `size` distinct rows, in ascending row order.
inline Matrix SampleBackground(const Matrix& rows, std::size_t size, std::uint64_t seed) {
  Rng rng(DeriveSeed(seed, "background"));
  std::vector<std::size_t> pick = rng.SampleWithoutReplacement(rows.rows, size);
  std::sort(pick.begin(), pick.end());
  Matrix out(pick.size(), rows.cols);
  for (std::size_t r = 0; r < pick.size(); ++r) {
    const auto src = rows.Row(pick[r]);
    std::copy(src.begin(), src.end(), out.Row(r).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation and exports
// ---------------------------------------------------------------------------

struct GlobalImportance {
  std::vector<std::string> features;  // descending mean |phi|, then name
  std::vector<double> mean_abs_phi;

  std::size_t RankOf(std::string_view feature) const {
    return static_cast<std::size_t>(std::find(features.begin(), features.end(), feature) -
                                    features.begin());
  }
};

inline GlobalImportance ComputeGlobalImportance(const std::vector<Explanation>& explanations) {
  if (explanations.empty()) throw Error(ErrorCode::kEmptySample, "no explanations");
  const auto& names = explanations.front().feature_names;
  std::vector<double> sum(names.size(), 0.0);
  for (const Explanation& e : explanations) {
    if (e.feature_names != names) {
      throw Error(ErrorCode::kHeterogeneousMask, "explanations use different feature sets");
    }
    for (std::size_t j = 0; j < names.size(); ++j) sum[j] += std::abs(e.phi[j]);
  }
  std::vector<std::size_t> order(names.size());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
  const double n = static_cast<double>(explanations.size());
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sum[a] != sum[b]) return sum[a] > sum[b];
    return names[a] < names[b];
  });
  GlobalImportance gi;
  for (std::size_t j : order) {
    gi.features.push_back(names[j]);
    gi.mean_abs_phi.push_back(sum[j] / n);
  }
  return gi;
}

inline void WriteImportanceCsv(std::ostream& out, const GlobalImportance& gi) {
  csv::WriteRow(out, {"rank", "feature", "mean_abs_phi"});
  for (std::size_t r = 0; r < gi.features.size(); ++r) {
    csv::WriteRow(out, {std::to_string(r + 1), gi.features[r], FormatDouble(gi.mean_abs_phi[r])});
  }
}

struct BeeswarmRow {
  std::string feature;
  std::string instance;
  double phi = 0.0;
  double value = 0.0;
};

// One row per (instance, feature), ordered by global importance rank, then
// instance id.
inline std::vector<BeeswarmRow> BeeswarmRows(const std::vector<Explanation>& explanations) {
  const GlobalImportance gi = ComputeGlobalImportance(explanations);
  std::vector<const Explanation*> sorted;
  for (const auto& e : explanations) sorted.push_back(&e);
  std::stable_sort(sorted.begin(), sorted.end(), [](const Explanation* a, const Explanation* b) {
    return a->instance_id < b->instance_id;
  });
  const auto& names = explanations.front().feature_names;
  std::vector<BeeswarmRow> rows;
  for (const std::string& feature : gi.features) {
    const std::size_t j =
        static_cast<std::size_t>(std::find(names.begin(), names.end(), feature) - names.begin());
    for (const Explanation* e : sorted) {
      rows.push_back({feature, e->instance_id, e->phi[j], e->feature_values[j]});
    }
  }
  return rows;
}

inline void WriteBeeswarmCsv(std::ostream& out, const std::vector<Explanation>& explanations) {
  csv::WriteRow(out, {"feature", "instance", "phi", "value"});
  for (const auto& r : BeeswarmRows(explanations)) {
    csv::WriteRow(out, {r.feature, r.instance, FormatDouble(r.phi), FormatDouble(r.value)});
  }
}

inline std::vector<BeeswarmRow> ReadBeeswarmCsv(std::istream& in) {
  csv::Reader reader(in);
  std::vector<std::string> fields;
  if (!reader.Next(fields) || fields != std::vector<std::string>{"feature", "instance", "phi", "value"}) {
    throw Error(ErrorCode::kMissingColumn, "beeswarm header mismatch");
  }
  std::vector<BeeswarmRow> rows;
  while (reader.Next(fields)) {
    if (fields.size() != 4) throw Error(ErrorCode::kBadNumeric, "beeswarm row width");
    BeeswarmRow row{fields[0], fields[1], 0.0, 0.0};
    if (!ParseDouble(fields[2], row.phi) || !ParseDouble(fields[3], row.value)) {
      throw Error(ErrorCode::kBadNumeric, "beeswarm row " + std::to_string(reader.record_number()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

struct WaterfallRow {
  std::string feature;  // "base" for the first row
  double value = 0.0;
  double phi = 0.0;
  double cumulative = 0.0;
};

// Base row, then non-zero contributions by descending |phi| (name breaks
// ties); the running sum ends at the prediction margin.
inline std::vector<WaterfallRow> WaterfallRows(const Explanation& e) {
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < e.phi.size(); ++j) {
    if (e.phi[j] != 0.0) order.push_back(j);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double fa = std::abs(e.phi[a]), fb = std::abs(e.phi[b]);
    if (fa != fb) return fa > fb;
    return e.feature_names[a] < e.feature_names[b];
  });
  std::vector<WaterfallRow> rows{{"base", 0.0, 0.0, e.base_value}};
  double cumulative = e.base_value;
  for (std::size_t j : order) {
    cumulative += e.phi[j];
    rows.push_back({e.feature_names[j], e.feature_values[j], e.phi[j], cumulative});
  }
  return rows;
}

inline void WriteWaterfallCsv(std::ostream& out, const Explanation& e) {
  csv::WriteRow(out, {"step", "feature", "value", "phi", "cumulative", "probability"});
  std::size_t step = 0;
  for (const auto& r : WaterfallRows(e)) {
    csv::WriteRow(out, {std::to_string(step++), r.feature, FormatDouble(r.value),
                        FormatDouble(r.phi), FormatDouble(r.cumulative),
                        FormatDouble(Logistic(r.cumulative))});
  }
}

}  // namespace nutripipe
