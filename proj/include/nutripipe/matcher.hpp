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
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nutripipe/csv.hpp"
#include "nutripipe/embeddings.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/food_db.hpp"
#include "nutripipe/parallel.hpp"
#include "nutripipe/random.hpp"

namespace nutripipe {

inline constexpr std::size_t kMaxMatches = 5;
inline constexpr double kDefaultLowKcal = 32.0;    // 100 g of strawberries
inline constexpr double kDefaultHighKcal = 717.0;  // 100 g of butter

struct CalibrationConfig {
  std::size_t sample_size = 5000;
  double per_post_quantile = 0.999;
  double rounding_precision = 1.0;  // percentage points
  std::uint64_t rng_seed = 0;

  void Validate() const {
    if (!(per_post_quantile > 0.0 && per_post_quantile < 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "per_post_quantile must lie in (0,1)");
    }
    if (sample_size < 1) throw Error(ErrorCode::kInvalidArgument, "sample_size must be >= 1");
    if (!(rounding_precision > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "rounding_precision must be positive");
    }
  }
};

struct CalibrationReport {
  std::vector<double> per_post_quantiles;
  double median_quantile = 0.0;
  double threshold = 0.0;
  std::size_t sample_size_used = 0;
  std::vector<std::string> missing_titles;
};

// 1-based rank ceil(q*n), clamped to [1, n]. The epsilon absorbs products
// such as 0.95*20 = 19.000000000000004.
inline std::size_t NearestRank(double q, std::size_t n) {
  const double raw = std::ceil(q * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n);
}

// k-th smallest value with k = ceil(q*n); no interpolation.
inline double NearestRankQuantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kEmptySample, "quantile of empty sample");
  const std::size_t k = NearestRank(q, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   values.end());
  return values[k - 1];
}

// Middle value, or mean of the two middle values for even counts.
inline double Median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptySample, "median of empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Rounds a similarity up to the configured percent granularity, e.g.
// 0.6159 -> 0.62 at 1 point. Result is clamped to [0, 1].
inline double RoundUpSimilarity(double similarity, double precision_points) {
  const double steps = std::ceil(similarity * 100.0 / precision_points - 1e-9);
  return std::clamp(steps * precision_points / 100.0, 0.0, 1.0);
}

// Threshold from a precomputed (post x item) similarity matrix.
inline CalibrationReport CalibrateFromSimilarities(
    const std::vector<std::vector<double>>& similarity_rows, const CalibrationConfig& cfg) {
  cfg.Validate();
  if (similarity_rows.empty()) throw Error(ErrorCode::kEmptySample, "no calibration rows");
  CalibrationReport report;
  report.per_post_quantiles.reserve(similarity_rows.size());
  for (const auto& row : similarity_rows) {
    report.per_post_quantiles.push_back(NearestRankQuantile(row, cfg.per_post_quantile));
  }
  report.sample_size_used = similarity_rows.size();
  report.median_quantile = Median(report.per_post_quantiles);
  report.threshold = RoundUpSimilarity(report.median_quantile, cfg.rounding_precision);
  return report;
}

// Food item vectors laid out contiguously with cached norms. Every food id
// must resolve to a vector.
class SimilarityIndex {
 public:
  SimilarityIndex(const FoodDatabase& db, const TextEmbedder& embedder)
      : db_(&db), embedder_(&embedder), dim_(embedder.dim()) {
    data_.reserve(db.count() * dim_);
    norms_.reserve(db.count());
    std::vector<std::string> missing;
    for (const FoodItem& item : db.items()) {
      auto vec = embedder.Embed(item.id, item.description);
      if (!vec) {
        missing.push_back(item.id);
        continue;
      }
      norms_.push_back(SquaredNorm(*vec));
      data_.insert(data_.end(), vec->begin(), vec->end());
    }
    if (!missing.empty()) {
      throw Error(ErrorCode::kMissingVector, std::to_string(missing.size()) +
                                                 " food ids without a vector, first: " +
                                                 missing.front());
    }
  }

  const FoodDatabase& db() const { return *db_; }
  const TextEmbedder& embedder() const { return *embedder_; }

  std::optional<std::vector<float>> EmbedTitle(std::string_view title) const {
    return embedder_->Embed(title, title);
  }

  std::vector<double> Similarities(std::span<const float> query) const {
    if (query.size() != dim_) {
      throw Error(ErrorCode::kDimMismatch, "query dim " + std::to_string(query.size()) +
                                               " != index dim " + std::to_string(dim_));
    }
    const double query_norm = SquaredNorm(query);
    std::vector<double> sims(norms_.size());
    for (std::size_t i = 0; i < norms_.size(); ++i) {
      sims[i] = CosineWithNorms(query, query_norm,
                                std::span<const float>(data_.data() + i * dim_, dim_), norms_[i]);
    }
    return sims;
  }

 private:
  const FoodDatabase* db_;
  const TextEmbedder* embedder_;
  std::size_t dim_;
  std::vector<float> data_;
  std::vector<double> norms_;
};

// Samples cfg.sample_size titles (all of them when fewer), scores each
// against every database item and calibrates the threshold. Titles without a
// vector are listed and skipped when they are under 1% of the sample.
inline CalibrationReport CalibrateThreshold(const std::vector<std::string>& titles,
                                            const SimilarityIndex& index,
                                            const CalibrationConfig& cfg) {
  cfg.Validate();
  if (titles.empty()) throw Error(ErrorCode::kEmptySample, "no titles to calibrate on");
  Rng rng(cfg.rng_seed);
  std::vector<std::size_t> picked = rng.SampleWithoutReplacement(titles.size(), cfg.sample_size);
  std::sort(picked.begin(), picked.end());

  std::vector<std::optional<double>> quantiles(picked.size());
  ParallelFor(picked.size(), [&](std::size_t i) {
    const auto vec = index.EmbedTitle(titles[picked[i]]);
    if (!vec) return;
    quantiles[i] = NearestRankQuantile(index.Similarities(*vec), cfg.per_post_quantile);
  });

  CalibrationReport report;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    if (quantiles[i]) {
      report.per_post_quantiles.push_back(*quantiles[i]);
    } else {
      report.missing_titles.push_back(titles[picked[i]]);
    }
  }
  if (!report.missing_titles.empty() && report.missing_titles.size() * 100 >= picked.size()) {
    throw Error(ErrorCode::kMissingVector,
                std::to_string(report.missing_titles.size()) + " of " +
                    std::to_string(picked.size()) + " sampled titles lack a vector");
  }
  if (report.per_post_quantiles.empty()) {
    throw Error(ErrorCode::kEmptySample, "no calibration title has a vector");
  }
  report.sample_size_used = report.per_post_quantiles.size();
  report.median_quantile = Median(report.per_post_quantiles);
  report.threshold = RoundUpSimilarity(report.median_quantile, cfg.rounding_precision);
  return report;
}

struct FoodMatch {
  std::string food_id;
  double similarity = 0.0;

  bool operator==(const FoodMatch&) const = default;
};

// Similarity-weighted densities per 100 g.
struct NutritionEstimate {
  double kcal = 0.0;
  double protein_g = 0.0;
  double carb_g = 0.0;
  double fat_g = 0.0;
  std::vector<FoodMatch> matches;  // descending similarity, then ascending id

  std::size_t matched_count() const { return matches.size(); }
  bool operator==(const NutritionEstimate&) const = default;
};

inline void ValidateThreshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must lie in (0,1)");
  }
}

// Keeps items with similarity >= threshold, orders by (similarity desc,
// id asc), truncates to five and averages densities weighted by similarity.
// Returns nullopt when nothing passes.
inline std::optional<NutritionEstimate> EstimateFromSimilarities(std::span<const double> sims,
                                                                 const FoodDatabase& db,
                                                                 double threshold) {
  std::vector<std::size_t> passing;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (sims[i] >= threshold) passing.push_back(i);
  }
  if (passing.empty()) return std::nullopt;
  const auto better = [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return db[a].id < db[b].id;
  };
  const std::size_t keep = std::min(kMaxMatches, passing.size());
  std::partial_sort(passing.begin(), passing.begin() + static_cast<std::ptrdiff_t>(keep),
                    passing.end(), better);
  passing.resize(keep);

  NutritionEstimate est;
  double weight = 0.0;
  for (std::size_t i : passing) {
    const FoodItem& item = db[i];
    const double s = sims[i];
    est.kcal += s * item.kcal;
    est.protein_g += s * item.protein_g;
    est.carb_g += s * item.carb_g;
    est.fat_g += s * item.fat_g;
    weight += s;
    est.matches.push_back({item.id, s});
  }
  est.kcal /= weight;
  est.protein_g /= weight;
  est.carb_g /= weight;
  est.fat_g /= weight;
  return est;
}

inline std::optional<NutritionEstimate> EstimateNutrition(std::string_view title,
                                                          const SimilarityIndex& index,
                                                          double threshold) {
  ValidateThreshold(threshold);
  if (Trim(title).empty()) throw Error(ErrorCode::kInvalidArgument, "empty title");
  const auto vec = index.EmbedTitle(title);
  if (!vec) throw Error(ErrorCode::kMissingVector, "no vector for title '" + std::string(title) + "'");
  const std::vector<double> sims = index.Similarities(*vec);
  return EstimateFromSimilarities(sims, index.db(), threshold);
}

struct OutlierFilterResult {
  std::vector<std::size_t> retained;  // indices into the input, in order
  std::size_t below = 0;
  std::size_t above = 0;
};

// Inclusive bounds: low <= kcal <= high survives.
inline OutlierFilterResult FilterOutliers(std::span<const double> kcal,
                                          double low = kDefaultLowKcal,
                                          double high = kDefaultHighKcal) {
  if (!(low < high)) throw Error(ErrorCode::kInvalidArgument, "outlier bounds need low < high");
  OutlierFilterResult result;
  for (std::size_t i = 0; i < kcal.size(); ++i) {
    if (kcal[i] < low) {
      ++result.below;
    } else if (kcal[i] > high) {
      ++result.above;
    } else {
      result.retained.push_back(i);
    }
  }
  return result;
}

struct TitledPost {
  std::string post_id;
  std::string title;
};

struct CorpusEstimates {
  std::map<std::string, NutritionEstimate> estimates;  // ordered by post id
  std::vector<std::string> no_match;                   // post ids, ascending
  std::vector<std::string> missing_vector;             // post ids, ascending
  std::size_t unique_titles = 0;
  std::size_t unique_titles_matched = 0;
};

// One similarity scan per distinct title; results fan out to every post
// sharing it. A failure on one title never aborts the batch.
inline CorpusEstimates EstimateCorpus(const std::vector<TitledPost>& posts,
                                      const SimilarityIndex& index, double threshold) {
  ValidateThreshold(threshold);
  std::vector<std::string> titles;
  std::unordered_map<std::string, std::size_t> title_slot;
  std::vector<std::size_t> post_slot(posts.size());
  for (std::size_t p = 0; p < posts.size(); ++p) {
    auto [it, inserted] = title_slot.emplace(posts[p].title, titles.size());
    if (inserted) titles.push_back(posts[p].title);
    post_slot[p] = it->second;
  }

  enum class Outcome { kMatched, kNoMatch, kMissingVector };
  std::vector<std::optional<NutritionEstimate>> memo(titles.size());
  std::vector<Outcome> outcome(titles.size(), Outcome::kNoMatch);
  ParallelFor(titles.size(), [&](std::size_t t) {
    if (Trim(titles[t]).empty()) return;
    const auto vec = index.EmbedTitle(titles[t]);
    if (!vec) {
      outcome[t] = Outcome::kMissingVector;
      return;
    }
    memo[t] = EstimateFromSimilarities(index.Similarities(*vec), index.db(), threshold);
    if (memo[t]) outcome[t] = Outcome::kMatched;
  });

  CorpusEstimates out;
  out.unique_titles = titles.size();
  for (const auto& m : memo) out.unique_titles_matched += m ? 1 : 0;
  for (std::size_t p = 0; p < posts.size(); ++p) {
    const std::size_t t = post_slot[p];
    switch (outcome[t]) {
      case Outcome::kMatched: out.estimates.emplace(posts[p].post_id, *memo[t]); break;
      case Outcome::kNoMatch: out.no_match.push_back(posts[p].post_id); break;
      case Outcome::kMissingVector: out.missing_vector.push_back(posts[p].post_id); break;
    }
  }
  std::sort(out.no_match.begin(), out.no_match.end());
  std::sort(out.missing_vector.begin(), out.missing_vector.end());
  return out;
}

// ---------------------------------------------------------------------------
// Estimate table
// ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 8> kEstimateColumns{
    "post_id", "kcal", "protein_g", "carb_g", "fat_g", "matched_count", "top_match_id",
    "top_similarity"};

struct EstimateRow {
  std::string post_id;
  NutritionEstimate estimate;  // only the top match survives a round trip
  std::size_t matched_count = 0;
};

inline void WriteEstimatesCsv(std::ostream& out, const std::vector<EstimateRow>& rows) {
  csv::WriteRow(out, {kEstimateColumns.begin(), kEstimateColumns.end()});
  for (const auto& r : rows) {
    const auto& e = r.estimate;
    const bool has_top = !e.matches.empty();
    csv::WriteRow(out, {r.post_id, FormatDouble(e.kcal), FormatDouble(e.protein_g),
                        FormatDouble(e.carb_g), FormatDouble(e.fat_g),
                        std::to_string(r.matched_count), has_top ? e.matches[0].food_id : "",
                        has_top ? FormatDouble(e.matches[0].similarity) : ""});
  }
}

inline std::vector<EstimateRow> ReadEstimatesCsv(std::istream& in) {
  csv::Reader reader(in);
  std::vector<std::string> row;
  if (!reader.Next(row) || !std::equal(row.begin(), row.end(), kEstimateColumns.begin(),
                                       kEstimateColumns.end())) {
    throw Error(ErrorCode::kMissingColumn, "estimate table header mismatch");
  }
  std::vector<EstimateRow> out;
  while (reader.Next(row)) {
    const std::string where = "estimate record " + std::to_string(reader.record_number());
    if (row.size() != kEstimateColumns.size()) {
      throw Error(ErrorCode::kInvalidArgument, where + " malformed");
    }
    EstimateRow r;
    r.post_id = row[0];
    auto& e = r.estimate;
    bool ok = ParseDouble(row[1], e.kcal) && ParseDouble(row[2], e.protein_g) &&
              ParseDouble(row[3], e.carb_g) && ParseDouble(row[4], e.fat_g) &&
              ParseInt(row[5], r.matched_count);
    if (ok && !row[6].empty()) {
      FoodMatch top;
      top.food_id = row[6];
      ok = ParseDouble(row[7], top.similarity);
      e.matches.push_back(std::move(top));
    }
    if (!ok) throw Error(ErrorCode::kBadNumeric, where);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace nutripipe
