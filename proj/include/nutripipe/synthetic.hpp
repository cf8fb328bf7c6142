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
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "nlohmann/json.hpp"
#include "nutripipe/corpus.hpp"
#include "nutripipe/embeddings.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/food_db.hpp"
#include "nutripipe/hash.hpp"
#include "nutripipe/matcher.hpp"
#include "nutripipe/random.hpp"
#include "nutripipe/strings.hpp"

namespace nutripipe {

// Synthetic food corpus with a planted effect: the chance that a post gets
// any comment is logistic in the post's estimated calorie density, plus a
// weekend and an author-tenure effect.
struct SyntheticOptions {
  std::size_t posts = 5000;
  std::size_t variants_per_food = 30;
  std::uint64_t seed = 7;
  double kcal_effect = 1.0;       // logit change per 150 kCal above 300
  double weekend_effect = 0.35;
  double tenure_effect = 0.5;
  double intercept = 0.6;
  std::size_t fallback_dim = kDefaultFallbackDim;
};

struct SyntheticSummary {
  std::size_t food_items = 0;
  std::size_t posts = 0;
  std::size_t posts_with_estimate = 0;
  std::size_t engaged = 0;
  double threshold = 0.0;
};

namespace synthetic {

struct BaseFood {
  std::string_view name;
  double kcal, protein, carb, fat;
};

// Per-100 g densities of common dishes, rounded.
inline constexpr std::array<BaseFood, 44> kBaseFoods{{
    {"pizza", 266, 11, 33, 10},          {"cheeseburger", 295, 17, 24, 14},
    {"burrito", 206, 9, 26, 7},          {"spaghetti bolognese", 132, 7, 15, 5},
    {"lasagna", 135, 8, 12, 6},          {"mac and cheese", 164, 7, 16, 8},
    {"fried chicken", 246, 19, 9, 15},   {"grilled chicken breast", 165, 31, 0, 4},
    {"chicken salad", 119, 12, 4, 6},    {"caesar salad", 190, 5, 8, 16},
    {"green salad", 35, 2, 6, 0.5},      {"tomato soup", 38, 1, 7, 1},
    {"ramen noodles", 188, 5, 27, 7},    {"pho", 45, 3, 6, 1},
    {"sushi roll", 150, 6, 29, 1},       {"steak", 271, 25, 0, 19},
    {"pork ribs", 292, 20, 4, 22},       {"salmon fillet", 208, 20, 0, 13},
    {"fish and chips", 230, 12, 20, 12}, {"french fries", 312, 3, 41, 15},
    {"chocolate cake", 371, 5, 50, 16},  {"cheesecake", 321, 6, 26, 22},
    {"chocolate chip cookie", 488, 5, 64, 24}, {"pancake", 227, 6, 28, 10},
    {"waffle", 291, 8, 33, 14},          {"blueberry muffin", 377, 5, 54, 16},
    {"croissant", 406, 8, 46, 21},       {"sourdough bread", 259, 9, 51, 2},
    {"bagel", 257, 10, 50, 2},           {"donut", 452, 5, 51, 25},
    {"ice cream", 207, 4, 24, 11},       {"apple pie", 265, 2, 37, 12},
    {"brownie", 466, 6, 50, 29},         {"vegan curry", 95, 3, 12, 4},
    {"vegetable stir fry", 70, 3, 9, 3}, {"fried rice", 163, 4, 30, 3},
    {"tacos", 226, 9, 20, 12},           {"nachos", 306, 8, 32, 17},
    {"omelette", 154, 11, 1, 12},        {"avocado toast", 220, 5, 22, 13},
    {"hummus", 166, 8, 14, 10},          {"beef stew", 95, 8, 7, 4},
    {"roast chicken", 190, 29, 0, 8},    {"bacon", 541, 37, 1, 42},
}};

inline constexpr std::array<std::string_view, 12> kFoodModifiers{
    "homemade", "frozen",       "restaurant", "prepared", "from recipe", "fast food",
    "with sauce", "reduced fat", "traditional", "ready to eat", "cooked",  "store bought"};

inline constexpr std::array<std::string_view, 12> kDescriptors{
    "grilled", "fried", "baked", "spicy",  "crispy", "creamy",
    "sweet",   "rich",  "juicy", "savory", "tender", "crunchy"};

inline constexpr std::array<std::string_view, 8> kOffTopicTitles{
    "What I had today", "Sunday vibes", "Date night", "Leftovers again",
    "Finally nailed it", "Lunch break", "Birthday spread", "Dinner is served"};

inline constexpr std::array<std::string_view, 6> kEmoji{"\xF0\x9F\x98\x8B", "\xF0\x9F\x94\xA5",
                                                        "!!", "\xE2\x9C\xA8", " :)", "\xF0\x9F\x98\x8D"};

inline std::string Capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

inline double Jitter(Rng& rng, double value, double spread, double hi) {
  return std::clamp(value * (1.0 + spread * (2.0 * rng.Uniform() - 1.0)), 0.0, hi);
}

inline std::string MakeTitle(Rng& rng, std::string_view food) {
  const std::string f(food);
  const std::string d(kDescriptors[rng.Index(kDescriptors.size())]);
  switch (rng.Index(8)) {
    case 0: return Capitalize(f);
    case 1: return "Homemade " + f;
    case 2: return Capitalize(d) + " " + f;
    case 3: return "My " + d + " " + f;
    case 4: return Capitalize(f) + " for dinner";
    case 5: return "First time making " + f;
    case 6: return "[homemade] " + f;
    default: return Capitalize(d) + " " + f + " at home";
  }
}

}  // namespace synthetic

inline FoodDatabase GenerateSyntheticFoodDb(const SyntheticOptions& opts) {
  using namespace synthetic;
  Rng rng(DeriveSeed(opts.seed, "synthetic/food"));
  std::vector<FoodItem> items;
  std::size_t next_id = 1;
  for (const BaseFood& base : kBaseFoods) {
    for (std::size_t v = 0; v < opts.variants_per_food; ++v) {
      FoodItem item;
      char id[32];
      std::snprintf(id, sizeof id, "F%05zu", next_id++);
      item.id = id;
      std::string desc = Capitalize(std::string(base.name));
      if (v > 0) {
        desc += ", " + std::string(kFoodModifiers[rng.Index(kFoodModifiers.size())]);
        if (rng.Bernoulli(0.4)) {
          desc += ", " + std::string(kFoodModifiers[rng.Index(kFoodModifiers.size())]);
        }
      }
      item.description = desc;
      item.kcal = std::round(Jitter(rng, base.kcal, 0.12, 900.0) * 10) / 10;
      item.protein_g = std::round(Jitter(rng, base.protein, 0.15, 100.0) * 100) / 100;
      item.carb_g = std::round(Jitter(rng, base.carb, 0.15, 100.0) * 100) / 100;
      item.fat_g = std::round(Jitter(rng, base.fat, 0.15, 100.0) * 100) / 100;
      item.source = static_cast<FoodSource>(rng.Index(3));
      items.push_back(std::move(item));
    }
  }
  return FoodDatabase(std::move(items));
}

// Writes food_db.csv and posts.jsonl into `dir`.
inline SyntheticSummary GenerateSynthetic(const std::filesystem::path& dir,
                                          const SyntheticOptions& opts) {
  using namespace synthetic;
  if (opts.posts == 0) throw Error(ErrorCode::kConfig, "posts must be >= 1");
  std::filesystem::create_directories(dir);
  SyntheticSummary summary;
  const FoodDatabase db = GenerateSyntheticFoodDb(opts);
  db.Save((dir / "food_db.csv").string());
  summary.food_items = db.count();

  Rng rng(DeriveSeed(opts.seed, "synthetic/posts"));
  const std::size_t n_authors = std::max<std::size_t>(20, opts.posts / 4);
  // Zipf-like author activity; low indices post most.
  std::vector<double> cumulative(n_authors);
  double total = 0;
  for (std::size_t a = 0; a < n_authors; ++a) {
    total += 1.0 / std::pow(static_cast<double>(a + 1), 0.9);
    cumulative[a] = total;
  }
  const auto draw_author = [&] {
    const double u = rng.Uniform() * total;
    return static_cast<std::size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                                    cumulative.begin());
  };
  const std::int64_t start = DaysFromCivil(2019, 6, 1) * 86400;
  const std::int64_t end = DaysFromCivil(2022, 12, 31) * 86400;

  struct Draft {
    PostRecord post;
    std::size_t author_index = 0;
    std::size_t food = 0;
    bool off_topic = false;
    std::string flair;
  };
  std::vector<Draft> drafts;
  drafts.reserve(opts.posts);
  for (std::size_t i = 0; i < opts.posts; ++i) {
    Draft d;
    char id[32];
    std::snprintf(id, sizeof id, "p%06zu", i + 1);
    d.post.id = id;
    d.author_index = draw_author();
    d.post.author = "user" + std::to_string(d.author_index);
    d.post.created_utc = start + static_cast<std::int64_t>(rng.Index(end - start));
    d.food = rng.Index(kBaseFoods.size());
    d.off_topic = rng.Bernoulli(0.05);
    d.post.title_raw = d.off_topic ? std::string(kOffTopicTitles[rng.Index(kOffTopicTitles.size())])
                                   : MakeTitle(rng, kBaseFoods[d.food].name);
    if (rng.Bernoulli(0.1)) d.post.title_raw += " " + std::string(kEmoji[rng.Index(kEmoji.size())]);
    const double f = rng.Uniform();
    d.flair = f < 0.5 ? "Homemade" : f < 0.8 ? "I Ate" : f < 0.85 ? "Pro/Chef" : "";
    if (rng.Bernoulli(0.015)) d.post.title_raw = "[deleted]";
    if (rng.Bernoulli(0.01)) d.post.author = "[deleted]";
    d.post.title_clean = CleanTitle(d.post.title_raw);
    drafts.push_back(std::move(d));
  }
  // Reposts of the same title by the same author a few minutes later.
  const std::size_t reposts = opts.posts / 50;
  for (std::size_t r = 0; r < reposts && !drafts.empty(); ++r) {
    Draft copy = drafts[rng.Index(drafts.size())];
    char id[32];
    std::snprintf(id, sizeof id, "r%06zu", r + 1);
    copy.post.id = id;
    copy.post.created_utc += 30 + static_cast<std::int64_t>(rng.Index(240));
    drafts.push_back(std::move(copy));
  }

  // Estimated density per distinct title, as the pipeline computes it.
  const TextEmbedder embedder = TextEmbedder::Fallback(opts.fallback_dim);
  const SimilarityIndex index(db, embedder);
  std::vector<std::string> titles;
  std::vector<TitledPost> titled;
  for (const Draft& d : drafts) {
    if (Trim(d.post.title_clean).empty()) continue;
    titles.push_back(d.post.title_clean);
    titled.push_back({d.post.id, d.post.title_clean});
  }
  CalibrationConfig cal;
  cal.rng_seed = DeriveSeed(opts.seed, "synthetic/calibrate");
  summary.threshold = CalibrateThreshold(titles, index, cal).threshold;
  const CorpusEstimates est = EstimateCorpus(titled, index, summary.threshold);

  std::ofstream out(dir / "posts.jsonl");
  if (!out) throw Error(ErrorCode::kIo, "cannot write posts.jsonl");
  const std::size_t tenured = std::max<std::size_t>(1, n_authors / 20);
  for (const Draft& d : drafts) {
    double kcal = kBaseFoods[d.food].kcal;
    if (auto it = est.estimates.find(d.post.id); it != est.estimates.end()) {
      kcal = it->second.kcal;
      ++summary.posts_with_estimate;
    }
    const double z = (kcal - 300.0) / 150.0;
    const bool weekend = UtcWeekday(d.post.created_utc) >= 5;
    double logit = opts.intercept + opts.kcal_effect * z;
    if (weekend) logit += opts.weekend_effect;
    if (d.author_index < tenured) logit += opts.tenure_effect;
    const bool engaged = rng.Bernoulli(1.0 / (1.0 + std::exp(-logit)));
    std::int64_t comments = 0;
    if (engaged) {
      comments = 1 + static_cast<std::int64_t>(std::floor(
                         std::exp(0.8 + 0.5 * z + 1.1 * rng.Normal())));
      ++summary.engaged;
    }
    const std::int64_t score =
        std::max<std::int64_t>(0, 4 * comments + static_cast<std::int64_t>(rng.Index(25)) - 5);
    nlohmann::json line{{"id", d.post.id},
                        {"author", d.post.author},
                        {"title", d.post.title_raw},
                        {"created_utc", d.post.created_utc},
                        {"num_comments", comments},
                        {"score", score}};
    if (!d.flair.empty()) line["link_flair_text"] = d.flair;
    out << line.dump() << '\n';
  }
  summary.posts = drafts.size();
  return summary;
}

}  // namespace nutripipe
