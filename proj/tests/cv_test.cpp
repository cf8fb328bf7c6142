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


#include "nutripipe/cv.hpp"

#include <cmath>
#include <set>

#include "gtest/gtest.h"
#include "model_test_util.hpp"

namespace nutripipe {
namespace {

using testing::MakeDataset;

std::vector<std::uint8_t> Labels(std::size_t pos, std::size_t neg) {
  std::vector<std::uint8_t> y(pos, 1);
  y.insert(y.end(), neg, 0);
  return y;
}

void ExpectPartition(const std::vector<Fold>& folds, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const Fold& f : folds) {
    EXPECT_EQ(f.train.size() + f.validation.size(), n);
    for (std::size_t i : f.validation) ++seen[i];
    std::set<std::size_t> t(f.train.begin(), f.train.end());
    for (std::size_t i : f.validation) EXPECT_FALSE(t.contains(i));
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(KFoldTest, ExactDivisibility) {
  const auto y = Labels(50, 50);
  const auto folds = StratifiedKFold(y, 5, 1);
  ASSERT_EQ(folds.size(), 5u);
  for (const Fold& f : folds) {
    std::size_t pos = 0;
    for (std::size_t i : f.validation) pos += y[i];
    EXPECT_EQ(pos, 10u);
    EXPECT_EQ(f.validation.size() - pos, 10u);
  }
  ExpectPartition(folds, 100);
}

TEST(KFoldTest, ClassTooSmall) {
  const auto y = Labels(1, 9);
  try {
    StratifiedKFold(y, 5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kClassTooSmall);
  }
}

TEST(KFoldTest, ProportionalWithinOne) {
  const auto y = Labels(60, 37);
  const auto folds = StratifiedKFold(y, 5, 4);
  ExpectPartition(folds, 97);
  for (const Fold& f : folds) {
    std::size_t pos = 0;
    for (std::size_t i : f.validation) pos += y[i];
    const std::size_t neg = f.validation.size() - pos;
    EXPECT_LE(std::abs(static_cast<double>(pos) - 60.0 / 5), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(neg) - 37.0 / 5), 1.0);
  }
  EXPECT_NE(StratifiedKFold(y, 5, 5)[0].validation, folds[0].validation);
}

TEST(SplitTest, StratifiedHoldout) {
  const auto y = Labels(100, 400);
  const Fold s = StratifiedSplit(y, 0.2, 3);
  std::size_t pos = 0;
  for (std::size_t i : s.validation) pos += y[i];
  EXPECT_EQ(pos, 20u);
  EXPECT_EQ(s.validation.size(), 100u);
  EXPECT_EQ(s.train.size(), 400u);
}

// Label depends on a two-way interaction that a stump cannot express,
// with 20% label noise and ten pure-noise columns.
Dataset InteractionTask(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return MakeDataset(n, [&](std::size_t, std::span<double> row) {
    for (double& v : row) v = rng.Uniform();
    const bool signal = row[0] > 0.3 ? row[1] > 0.6 : row[1] < 0.4;
    return rng.Bernoulli(signal ? 0.8 : 0.2);
  });
}

TEST(TuneTest, SingleConfigGrid) {
  const Dataset d = InteractionTask(200, 1);
  TuningGrid grid;
  grid.n_estimators = {7};
  grid.max_depth = {2};
  grid.learning_rate = {0.3};
  const TuningResult r = TuneHyperparameters(d, grid, {.n_random = 20, .seed = 1});
  EXPECT_EQ(r.best.n_estimators, 7);
  EXPECT_EQ(r.best.max_depth, 2);
  EXPECT_EQ(r.best.learning_rate, 0.3);
  EXPECT_EQ(r.trials.size(), 1u);
}

// Mean CV AUC from freshly trained models, independent of the path cache.
double RefitCvAuc(const Dataset& d, const GbtConfig& cfg, std::uint64_t seed) {
  double sum = 0;
  const auto folds = StratifiedKFold(d.y, 5, seed);
  for (const Fold& f : folds) {
    const Dataset train = d.Subset(f.train), val = d.Subset(f.validation);
    sum += RocAuc(PredictMargins(TrainGbt(train, cfg), val), val.y);
  }
  return sum / static_cast<double>(folds.size());
}

TEST(TuneTest, PlantedOptimumMatchesExhaustiveSearch) {
  const Dataset d = InteractionTask(400, 2);
  TuningGrid grid;
  grid.n_estimators = {5, 20, 60};
  grid.max_depth = {1, 2, 10};
  grid.learning_rate = {0.1, 0.3};
  const TuningOptions opts{.n_random = grid.size(), .folds = 5, .refine_points = 10, .seed = 8};
  const TuningResult r = TuneHyperparameters(d, grid, opts);
  TuningTrial oracle{};
  bool first = true;
  for (const TuningTrial& t : r.trials) {
    const double refit = RefitCvAuc(d, t.config, opts.seed);
    EXPECT_NEAR(t.mean_auc, refit, 1e-12) << t.config.n_estimators << " " << t.config.max_depth;
    const TuningTrial candidate{t.config, refit, t.phase};
    if (first || TrialBetter(candidate, oracle)) oracle = candidate;
    first = false;
  }
  EXPECT_EQ(r.best, oracle.config);
  EXPECT_EQ(r.best.max_depth, 2);
  // Phase 2 adds refinement points around the winner's estimator count.
  std::size_t phase2 = 0;
  for (const auto& t : r.trials) phase2 += t.phase == 2;
  EXPECT_GT(phase2, 0u);
}

TEST(TuneTest, Deterministic) {
  const Dataset d = InteractionTask(200, 3);
  TuningGrid grid;
  grid.n_estimators = {5, 20};
  grid.max_depth = {1, 2, 3};
  grid.learning_rate = {0.1, 0.3};
  const TuningOptions opts{.n_random = 4, .seed = 21};
  const TuningResult a = TuneHyperparameters(d, grid, opts);
  const TuningResult b = TuneHyperparameters(d, grid, opts);
  ASSERT_EQ(a.trials.size(), b.trials.size());
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    EXPECT_EQ(a.trials[i].config, b.trials[i].config);
    EXPECT_EQ(a.trials[i].mean_auc, b.trials[i].mean_auc);
  }
}

TEST(TuneTest, TieBreakPrefersSmallerModels) {
  TuningTrial a{{}, 0.8, 1}, b{{}, 0.8, 1};
  a.config.n_estimators = 10;
  b.config.n_estimators = 50;
  EXPECT_TRUE(TrialBetter(a, b));
  b.config.n_estimators = 10;
  b.config.max_depth = 2;
  a.config.max_depth = 3;
  EXPECT_TRUE(TrialBetter(b, a));
  b.mean_auc = 0.7;
  EXPECT_TRUE(TrialBetter(a, b));
}

}  // namespace
}  // namespace nutripipe
