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

#include "nutripipe/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gtest/gtest.h"
#include "nutripipe/random.hpp"

namespace nutripipe {
namespace {

TEST(NearestRankTest, QuantileAndMedian) {
  EXPECT_EQ(NearestRankQuantile({0.1, 0.2, 0.9}, 0.999), 0.9);
  EXPECT_EQ(NearestRankQuantile({5, 1, 4, 2, 3}, 0.5), 3);
  EXPECT_EQ(NearestRankQuantile({5, 1, 4, 2, 3}, 0.2), 1);
  // 0.95 * 20 is 19.000000000000004 in binary floating point; rank stays 19.
  std::vector<double> twenty(20);
  for (int i = 0; i < 20; ++i) twenty[i] = i + 1;
  EXPECT_EQ(NearestRankQuantile(twenty, 0.95), 19);
  EXPECT_EQ(Median({3, 1, 2}), 2);
  EXPECT_EQ(Median({4, 1, 2, 3}), 2.5);
}

TEST(RoundUpSimilarityTest, WholePercent) {
  EXPECT_DOUBLE_EQ(RoundUpSimilarity(0.6159, 1.0), 0.62);
  EXPECT_DOUBLE_EQ(RoundUpSimilarity(0.70, 1.0), 0.70);
  EXPECT_DOUBLE_EQ(RoundUpSimilarity(0.5, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(RoundUpSimilarity(0.6159, 0.5), 0.62);
  EXPECT_DOUBLE_EQ(RoundUpSimilarity(0.6149, 0.5), 0.615);
  EXPECT_DOUBLE_EQ(RoundUpSimilarity(-0.2, 1.0), 0.0);
}

TEST(CalibrateTest, HandComputedRows) {
  CalibrationConfig cfg;
  cfg.per_post_quantile = 0.999;
  const auto report =
      CalibrateFromSimilarities({{0.1, 0.2, 0.9}, {0.1, 0.3, 0.7}, {0.2, 0.2, 0.5}}, cfg);
  EXPECT_EQ(report.per_post_quantiles, (std::vector<double>{0.9, 0.7, 0.5}));
  EXPECT_EQ(report.median_quantile, 0.7);
  EXPECT_DOUBLE_EQ(report.threshold, 0.70);
  EXPECT_EQ(report.sample_size_used, 3u);
}

TEST(CalibrateTest, ConstantSimilarities) {
  const auto report = CalibrateFromSimilarities(
      std::vector<std::vector<double>>(10, std::vector<double>(40, 0.5)), CalibrationConfig{});
  EXPECT_DOUBLE_EQ(report.threshold, 0.50);
}

TEST(CalibrateTest, RejectsBadConfig) {
  CalibrationConfig cfg;
  cfg.per_post_quantile = 1.0;
  EXPECT_THROW(CalibrateFromSimilarities({{0.1}}, cfg), Error);
  try {
    CalibrateFromSimilarities({}, CalibrationConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySample);
  }
}

// Food vectors are built so that cosine with the query axis e0 equals a
// chosen similarity: item k = s*e0 + sqrt(1-s^2)*e(k+1).
struct Fixture {
  FoodDatabase db;
  VectorStore store;
};

Fixture MakeFixture(const std::vector<std::pair<double, FoodItem>>& items, std::size_t dim = 32) {
  Fixture f;
  f.store = VectorStore(dim);
  std::vector<FoodItem> foods;
  std::size_t axis = 1;
  for (const auto& [sim, item] : items) {
    std::vector<float> v(dim, 0.0f);
    v[0] = static_cast<float>(sim);
    v[axis++] = static_cast<float>(std::sqrt(1.0 - sim * sim));
    f.store.Insert(item.id, v);
    foods.push_back(item);
  }
  std::vector<float> query(dim, 0.0f);
  query[0] = 1.0f;
  f.store.Insert("title", query);
  f.db = FoodDatabase(std::move(foods));
  return f;
}

FoodItem Food(std::string id, double kcal, double protein = 10, double carb = 20,
              double fat = 5) {
  return FoodItem{std::move(id), "desc", kcal, protein, carb, fat, FoodSource::kOther};
}

TEST(EstimateTest, SingleMatchCollapsesWeights) {
  auto f = MakeFixture({{0.95, Food("a", 266)}, {0.1, Food("b", 900)}});
  const auto embedder = TextEmbedder::Precomputed(f.store);
  const SimilarityIndex index(f.db, embedder);
  const auto est = EstimateNutrition("title", index, 0.62);
  ASSERT_TRUE(est);
  EXPECT_EQ(est->matched_count(), 1u);
  EXPECT_DOUBLE_EQ(est->kcal, 266.0);
  EXPECT_EQ(est->matches[0].food_id, "a");
}

TEST(EstimateTest, EqualWeightsGiveArithmeticMean) {
  const std::vector<double> sims{0.8, 0.8};
  const FoodDatabase db({Food("a", 200), Food("b", 300)});
  const auto est = EstimateFromSimilarities(sims, db, 0.62);
  ASSERT_TRUE(est);
  EXPECT_DOUBLE_EQ(est->kcal, 250.0);
}

TEST(EstimateTest, ThreeMatchWeightedMean) {
  const std::vector<double> sims{0.9, 0.8, 0.7};
  const FoodDatabase db({Food("a", 100), Food("b", 200), Food("c", 300)});
  const auto est = EstimateFromSimilarities(sims, db, 0.62);
  ASSERT_TRUE(est);
  EXPECT_NEAR(est->kcal, (90.0 + 160.0 + 210.0) / 2.4, 1e-9);
  EXPECT_NEAR(est->kcal, 191.66666666666666, 1e-9);
}

TEST(EstimateTest, FullPathThreeMatches) {
  auto f = MakeFixture({{0.875, Food("a", 100)}, {0.75, Food("b", 200)},
                        {0.625, Food("c", 300)}, {0.5, Food("d", 400)}});
  const auto embedder = TextEmbedder::Precomputed(f.store);
  const SimilarityIndex index(f.db, embedder);
  const auto est = EstimateNutrition("title", index, 0.6);
  ASSERT_TRUE(est);
  EXPECT_EQ(est->matched_count(), 3u);
  EXPECT_NEAR(est->kcal, (87.5 + 150.0 + 187.5) / 2.25, 1e-5);
}

TEST(EstimateTest, KeepsAtMostFiveAndBreaksTiesById) {
  std::vector<double> sims(8, 0.7);
  sims[7] = 0.9;
  std::vector<FoodItem> foods;
  for (const char* id : {"h", "g", "f", "e", "d", "c", "b", "a"}) foods.push_back(Food(id, 100));
  const FoodDatabase db(foods);
  const auto est = EstimateFromSimilarities(sims, db, 0.62);
  ASSERT_TRUE(est);
  ASSERT_EQ(est->matched_count(), 5u);
  EXPECT_EQ(est->matches[0].food_id, "a");  // 0.9
  EXPECT_EQ(est->matches[1].food_id, "b");
  EXPECT_EQ(est->matches[4].food_id, "e");
}

TEST(EstimateTest, NoMatchAndThresholdIsInclusive) {
  const FoodDatabase db({Food("a", 100)});
  EXPECT_FALSE(EstimateFromSimilarities(std::vector<double>{0.61}, db, 0.62));
  EXPECT_TRUE(EstimateFromSimilarities(std::vector<double>{0.62}, db, 0.62));
}

TEST(EstimateTest, MissingVectorsAreErrors) {
  VectorStore store(4);
  store.Insert("a", {1, 0, 0, 0});
  const FoodDatabase db({Food("a", 100), Food("b", 200)});
  const auto embedder = TextEmbedder::Precomputed(store);
  try {
    SimilarityIndex index(db, embedder);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingVector);
  }
  const FoodDatabase db_a({Food("a", 100)});
  const SimilarityIndex index(db_a, embedder);
  EXPECT_THROW(EstimateNutrition("unknown title", index, 0.5), Error);
  EXPECT_THROW(EstimateNutrition("a", index, 1.0), Error);
}

TEST(FilterOutliersTest, InclusiveBounds) {
  const std::vector<double> kcal{10, 32, 400, 717, 800};
  const auto result = FilterOutliers(kcal, 32, 717);
  EXPECT_EQ(result.retained, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(result.below, 1u);
  EXPECT_EQ(result.above, 1u);
  const std::vector<double> just_below{31.99};
  EXPECT_EQ(FilterOutliers(just_below).below, 1u);
  EXPECT_THROW(FilterOutliers(kcal, 717, 32), Error);
}

// Random titles drawn from a small vocabulary against a random 20 item DB
// with the fallback embedder.
struct SyntheticCorpus {
  FoodDatabase db;
  std::vector<TitledPost> posts;
};

SyntheticCorpus MakeSyntheticCorpus(std::uint64_t seed, std::size_t n_posts,
                                    std::size_t n_items) {
  static const std::vector<std::string> kWords{
      "pizza", "cheese", "chicken", "salad", "ramen", "noodle", "beef",  "taco",
      "soup",  "bread",  "fried",   "rice",  "sushi", "cake",   "apple", "pie"};
  Rng rng(seed);
  const auto phrase = [&](std::size_t words) {
    std::string out;
    for (std::size_t w = 0; w < words; ++w) {
      if (w) out += ' ';
      out += kWords[rng.Index(kWords.size())];
    }
    return out;
  };
  std::vector<FoodItem> foods;
  for (std::size_t i = 0; i < n_items; ++i) {
    foods.push_back(FoodItem{"f" + std::to_string(i), phrase(2 + rng.Index(2)),
                             rng.Uniform(20, 800), rng.Uniform(0, 30), rng.Uniform(0, 60),
                             rng.Uniform(0, 40), FoodSource::kOther});
  }
  SyntheticCorpus c{FoodDatabase(std::move(foods)), {}};
  for (std::size_t p = 0; p < n_posts; ++p) {
    c.posts.push_back({"p" + std::to_string(1000 + p), phrase(1 + rng.Index(3))});
  }
  return c;
}

TEST(EstimateCorpusTest, MatchesSequentialOracle) {
  const auto c = MakeSyntheticCorpus(5, 50, 20);
  const auto embedder = TextEmbedder::Fallback(256);
  const SimilarityIndex index(c.db, embedder);
  const double threshold = 0.3;
  const auto batch = EstimateCorpus(c.posts, index, threshold);
  std::size_t matched = 0;
  for (const auto& post : c.posts) {
    const auto est = EstimateNutrition(post.title, index, threshold);
    if (est) {
      ++matched;
      ASSERT_TRUE(batch.estimates.contains(post.post_id));
      EXPECT_EQ(batch.estimates.at(post.post_id), *est);
    } else {
      EXPECT_TRUE(std::binary_search(batch.no_match.begin(), batch.no_match.end(), post.post_id));
    }
  }
  EXPECT_EQ(batch.estimates.size(), matched);
  EXPECT_GT(matched, 0u);
  EXPECT_EQ(batch.estimates.size() + batch.no_match.size(), c.posts.size());
}

TEST(EstimateCorpusTest, DuplicateTitlesShareOneScan) {
  std::vector<FoodItem> foods{FoodItem{"a", "cheese pizza", 266, 11, 33, 10, FoodSource::kOther}};
  const FoodDatabase pizza_db(foods);
  const auto embedder = TextEmbedder::Fallback(256);
  const SimilarityIndex index(pizza_db, embedder);
  const auto out = EstimateCorpus({{"p1", "Pizza"}, {"p2", "Pizza"}}, index, 0.2);
  EXPECT_EQ(out.unique_titles, 1u);
  ASSERT_EQ(out.estimates.size(), 2u);
  EXPECT_EQ(out.estimates.at("p1"), out.estimates.at("p2"));
}

TEST(EstimateCorpusTest, NothingPassesThreshold) {
  const FoodDatabase db({FoodItem{"a", "zzz qqq", 266, 11, 33, 10, FoodSource::kOther}});
  const auto embedder = TextEmbedder::Fallback(256);
  const SimilarityIndex index(db, embedder);
  const auto out = EstimateCorpus({{"p2", "pizza"}, {"p1", "ramen"}}, index, 0.9);
  EXPECT_TRUE(out.estimates.empty());
  EXPECT_EQ(out.no_match, (std::vector<std::string>{"p1", "p2"}));
}

TEST(MatcherPropertyTest, ConvexityMonotonicityPermutationInvariance) {
  const auto c = MakeSyntheticCorpus(17, 60, 40);
  const auto embedder = TextEmbedder::Fallback(128);
  const SimilarityIndex index(c.db, embedder);

  std::vector<FoodItem> shuffled = c.db.items();
  Rng rng(4);
  rng.Shuffle(shuffled);
  const FoodDatabase shuffled_db(shuffled);
  const SimilarityIndex shuffled_index(shuffled_db, embedder);

  for (const auto& post : c.posts) {
    std::size_t previous = kMaxMatches + 1;
    for (double threshold : {0.2, 0.3, 0.4, 0.5, 0.6, 0.8}) {
      const auto est = EstimateNutrition(post.title, index, threshold);
      const std::size_t count = est ? est->matched_count() : 0;
      EXPECT_LE(count, previous);
      previous = count;
      const auto other = EstimateNutrition(post.title, shuffled_index, threshold);
      ASSERT_EQ(est.has_value(), other.has_value());
      if (!est) continue;
      EXPECT_EQ(*est, *other);
      double lo[4] = {1e300, 1e300, 1e300, 1e300}, hi[4] = {-1e300, -1e300, -1e300, -1e300};
      for (const auto& m : est->matches) {
        EXPECT_GE(m.similarity, threshold);
        const FoodItem* item = c.db.Find(m.food_id);
        const double d[4] = {item->kcal, item->protein_g, item->carb_g, item->fat_g};
        for (int k = 0; k < 4; ++k) {
          lo[k] = std::min(lo[k], d[k]);
          hi[k] = std::max(hi[k], d[k]);
        }
      }
      const double e[4] = {est->kcal, est->protein_g, est->carb_g, est->fat_g};
      for (int k = 0; k < 4; ++k) {
        EXPECT_GE(e[k], lo[k] - 1e-9);
        EXPECT_LE(e[k], hi[k] + 1e-9);
      }
    }
  }
}

TEST(CalibrateThresholdTest, DeterministicAndMonotoneInQuantile) {
  const auto c = MakeSyntheticCorpus(23, 300, 400);
  const auto embedder = TextEmbedder::Fallback(128);
  const SimilarityIndex index(c.db, embedder);
  std::vector<std::string> titles;
  for (const auto& p : c.posts) titles.push_back(p.title);
  CalibrationConfig cfg;
  cfg.sample_size = 100;
  cfg.rng_seed = 8;
  const auto a = CalibrateThreshold(titles, index, cfg);
  const auto b = CalibrateThreshold(titles, index, cfg);
  EXPECT_EQ(a.per_post_quantiles, b.per_post_quantiles);
  EXPECT_EQ(a.threshold, b.threshold);
  EXPECT_EQ(a.sample_size_used, 100u);
  EXPECT_GE(a.threshold, a.median_quantile);
  double previous = -1.0;
  for (double q : {0.95, 0.99, 0.999, 0.9999}) {
    cfg.per_post_quantile = q;
    const double t = CalibrateThreshold(titles, index, cfg).threshold;
    EXPECT_GE(t, previous) << q;
    previous = t;
  }
}

TEST(CalibrateThresholdTest, MissingTitleVectors) {
  VectorStore store(4);
  store.Insert("a", {1, 0, 0, 0});
  for (int i = 0; i < 200; ++i) store.Insert("t" + std::to_string(i), {1, 1, 0, 0});
  const FoodDatabase db({Food("a", 100)});
  const auto embedder = TextEmbedder::Precomputed(store);
  const SimilarityIndex index(db, embedder);
  std::vector<std::string> titles;
  for (int i = 0; i < 200; ++i) titles.push_back("t" + std::to_string(i));
  titles.push_back("unknown");
  CalibrationConfig cfg;
  cfg.sample_size = 1000;
  const auto report = CalibrateThreshold(titles, index, cfg);  // 1 of 201 < 1%
  EXPECT_EQ(report.missing_titles, std::vector<std::string>{"unknown"});
  EXPECT_EQ(report.sample_size_used, 200u);
  titles.push_back("unknown2");
  titles.push_back("unknown3");
  try {
    CalibrateThreshold(titles, index, cfg);  // 3 of 203 >= 1%
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingVector);
  }
}

TEST(EstimatesCsvTest, RoundTripKeepsTopMatch) {
  NutritionEstimate a;
  a.kcal = 266.1234567890123;
  a.protein_g = 11.0;
  a.carb_g = 33.3;
  a.fat_g = 0.1 + 0.2;
  a.matches = {{"F00002", 0.91}, {"F00001", 0.75}};
  NutritionEstimate b;
  b.kcal = 50.0;
  std::stringstream buf;
  WriteEstimatesCsv(buf, {{"p1", a, 2}, {"p,2", b, 0}});
  const auto rows = ReadEstimatesCsv(buf);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].post_id, "p1");
  EXPECT_EQ(rows[0].estimate.kcal, a.kcal);
  EXPECT_EQ(rows[0].estimate.fat_g, a.fat_g);
  EXPECT_EQ(rows[0].matched_count, 2u);
  ASSERT_EQ(rows[0].estimate.matches.size(), 1u);
  EXPECT_EQ(rows[0].estimate.matches[0], a.matches[0]);
  EXPECT_EQ(rows[1].post_id, "p,2");
  EXPECT_TRUE(rows[1].estimate.matches.empty());
}

TEST(EstimatesCsvTest, RejectsBadHeaderAndNumbers) {
  std::stringstream bad_header("post_id,kcal\n");
  try {
    ReadEstimatesCsv(bad_header);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingColumn);
  }
  std::stringstream bad_number(
      "post_id,kcal,protein_g,carb_g,fat_g,matched_count,top_match_id,top_similarity\n"
      "p1,abc,1,1,1,1,F1,0.9\n");
  try {
    ReadEstimatesCsv(bad_number);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBadNumeric);
  }
}

}  // namespace
}  // namespace nutripipe
