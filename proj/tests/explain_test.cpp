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


#include "nutripipe/explain.hpp"

#include <numeric>
#include <sstream>

#include "gtest/gtest.h"
#include "model_test_util.hpp"
#include "shapley_oracle.hpp"

namespace nutripipe {
namespace {

using testing::RandomIntegerRows;
using testing::RandomTreeModel;

double Sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

TEST(ShapleyExactTest, ConstantModel) {
  Rng rng(1);
  TrainedModel m = RandomTreeModel(4, {0}, 0, 1, rng);
  const Matrix bg = RandomIntegerRows(5, 4, rng);
  const std::vector<double> x{1, 2, 3, 0};
  const Explanation e = ShapleyExact(m, x, bg);
  EXPECT_EQ(e.base_value, m.base_margin);
  for (double p : e.phi) EXPECT_EQ(p, 0.0);
  const Explanation s = ShapleySampled(m, x, bg, 50, 3);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(s.phi[j], 0.0);
    EXPECT_EQ(s.standard_error[j], 0.0);
  }
}

TEST(ShapleyExactTest, AdditiveModel) {
  TrainedModel m;
  m.feature_names = {"a", "b"};
  m.config.learning_rate = 1.0;
  Tree f;  // f(x0) = x0 < 1.5 ? -1 : 2
  f.nodes = {{0, 1.5, 1, 2, 0}, {-1, 0, -1, -1, -1.0}, {-1, 0, -1, -1, 2.0}};
  Tree g;  // g(x1) = x1 < 0.5 ? 0.25 : -0.75
  g.nodes = {{1, 0.5, 1, 2, 0}, {-1, 0, -1, -1, 0.25}, {-1, 0, -1, -1, -0.75}};
  m.trees = {f, g};
  Matrix bg(4, 2);
  bg.data = {0, 0, 1, 1, 2, 0, 3, 1};  // E f = 0.5, E g = -0.25
  const std::vector<double> x{2, 1};
  const Explanation e = ShapleyExact(m, x, bg);
  EXPECT_NEAR(e.phi[0], 2.0 - 0.5, 1e-15);
  EXPECT_NEAR(e.phi[1], -0.75 - (-0.25), 1e-15);
  EXPECT_NEAR(e.base_value, 0.25, 1e-15);
}

TEST(ShapleyExactTest, MatchesEnumerationOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 3 + rng.Index(6);
    std::vector<int> usable;
    for (std::size_t j = 0; j + 1 < d; ++j) usable.push_back(static_cast<int>(j));  // last is dummy
    const TrainedModel m = RandomTreeModel(d, usable, 4, 2 + static_cast<int>(rng.Index(2)), rng);
    const Matrix bg = RandomIntegerRows(4, d, rng);
    std::vector<double> x(d);
    for (double& v : x) v = static_cast<double>(rng.Index(4));
    const Explanation e = ShapleyExact(m, x, bg);
    const std::vector<double> oracle = testing::OracleShapley(m, x, bg);
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(e.phi[j], oracle[j], 1e-9);
    EXPECT_EQ(e.phi[d - 1], 0.0);
    EXPECT_NEAR(e.base_value + Sum(e.phi), e.prediction_margin, 1e-6);
    EXPECT_NEAR(e.prediction_margin, testing::OracleMargin(m, x), 1e-12);
  }
}

TEST(ShapleyExactTest, SymmetricDuplicatedFeatures) {
  TrainedModel m;
  m.feature_names = {"a", "b", "c"};
  m.config.learning_rate = 1.0;
  Tree t1, t2;  // identical splits on a then b, and on b then a
  t1.nodes = {{0, 0.5, 1, 2, 0}, {-1, 0, -1, -1, -1}, {1, 0.5, 3, 4, 0},
              {-1, 0, -1, -1, 0.5}, {-1, 0, -1, -1, 3}};
  t2.nodes = {{1, 0.5, 1, 2, 0}, {-1, 0, -1, -1, -1}, {0, 0.5, 3, 4, 0},
              {-1, 0, -1, -1, 0.5}, {-1, 0, -1, -1, 3}};
  m.trees = {t1, t2};
  Matrix bg(3, 3);
  bg.data = {0, 0, 1, 1, 1, 0, 0, 0, 2};
  const std::vector<double> x{1, 1, 5};
  const Explanation e = ShapleyExact(m, x, bg);
  EXPECT_NEAR(e.phi[0], e.phi[1], 1e-9);
  EXPECT_EQ(e.phi[2], 0.0);
}

TEST(ShapleyExactTest, Errors) {
  Rng rng(2);
  const TrainedModel wide = RandomTreeModel(16, {0, 1}, 2, 2, rng);
  const Matrix bg = RandomIntegerRows(3, 16, rng);
  const std::vector<double> x(16, 1.0);
  try {
    ShapleyExact(wide, x, bg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooManyFeatures);
  }
  EXPECT_NO_THROW(ShapleySampled(wide, x, bg, 32, 1));
  const Matrix empty(0, 16);
  try {
    ShapleySampled(wide, x, empty, 10, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyBackground);
  }
}

TEST(ShapleySampledTest, AgreesWithExactWithinFourSe) {
  Rng rng(13);
  std::size_t total = 0, within = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 4 + rng.Index(7);
    std::vector<int> usable(d);
    std::iota(usable.begin(), usable.end(), 0);
    const TrainedModel m = RandomTreeModel(d, usable, 6, 3, rng);
    const Matrix bg = RandomIntegerRows(20, d, rng);
    for (int inst = 0; inst < 5; ++inst) {
      std::vector<double> x(d);
      for (double& v : x) v = static_cast<double>(rng.Index(4));
      const Explanation exact = ShapleyExact(m, x, bg);
      const Explanation sampled = ShapleySampled(m, x, bg, 2000, rng.NextU64());
      for (std::size_t j = 0; j < d; ++j) {
        ++total;
        within += std::abs(sampled.phi[j] - exact.phi[j]) <= 4 * sampled.standard_error[j] + 1e-12;
      }
      // 2000 is a multiple of 20 background rows.
      EXPECT_NEAR(sampled.base_value + Sum(sampled.phi), sampled.prediction_margin, 1e-9);
    }
  }
  EXPECT_GE(static_cast<double>(within), 0.99 * static_cast<double>(total));
}

TEST(ShapleySampledTest, MorePermutationsShrinkError) {
  Rng rng(17);
  const TrainedModel m = RandomTreeModel(8, {0, 1, 2, 3, 4, 5, 6, 7}, 6, 3, rng);
  const Matrix bg = RandomIntegerRows(10, 8, rng);
  double small = 0, large = 0;
  for (int run = 0; run < 10; ++run) {
    std::vector<double> x(8);
    for (double& v : x) v = static_cast<double>(rng.Index(4));
    const std::uint64_t seed = rng.NextU64();
    small += Sum(ShapleySampled(m, x, bg, 200, seed).standard_error);
    large += Sum(ShapleySampled(m, x, bg, 400, seed).standard_error);
  }
  EXPECT_LT(large, small);
}

TEST(ShapleySampledTest, Deterministic) {
  Rng rng(19);
  const TrainedModel m = RandomTreeModel(6, {0, 2, 4}, 5, 3, rng);
  const Matrix bg = RandomIntegerRows(10, 6, rng);
  const std::vector<double> x{1, 2, 3, 0, 1, 2};
  const Explanation a = ShapleySampled(m, x, bg, 300, 5);
  const Explanation b = ShapleySampled(m, x, bg, 300, 5);
  EXPECT_EQ(a.phi, b.phi);
  EXPECT_EQ(a.standard_error, b.standard_error);
}

Explanation Handmade(std::string id, std::vector<double> phi) {
  Explanation e;
  e.instance_id = std::move(id);
  e.feature_names = {"x", "y", "z"};
  e.feature_values = {1.5, 0, 7};
  e.phi = std::move(phi);
  e.base_value = -0.25;
  e.prediction_margin = e.base_value + Sum(e.phi);
  return e;
}

TEST(ImportanceTest, AbsoluteMeanAndOrder) {
  const GlobalImportance one = ComputeGlobalImportance({Handmade("a", {0.1, -0.5, 0.1})});
  EXPECT_EQ(one.features, (std::vector<std::string>{"y", "x", "z"}));
  EXPECT_EQ(one.mean_abs_phi, (std::vector<double>{0.5, 0.1, 0.1}));
  const GlobalImportance two =
      ComputeGlobalImportance({Handmade("a", {0.3, 0, 0}), Handmade("b", {-0.3, 0, 0})});
  EXPECT_DOUBLE_EQ(two.mean_abs_phi[0], 0.3);
  EXPECT_EQ(two.RankOf("x"), 0u);
}

TEST(ImportanceTest, HandAveragedOracle) {
  Rng rng(23);
  std::vector<Explanation> list;
  double expected[3] = {0, 0, 0};
  for (int i = 0; i < 100; ++i) {
    std::vector<double> phi{rng.Normal(), 2 * rng.Normal(), 0.5 * rng.Normal()};
    for (int j = 0; j < 3; ++j) expected[j] += std::abs(phi[static_cast<std::size_t>(j)]) / 100;
    list.push_back(Handmade(std::to_string(i), phi));
  }
  const GlobalImportance gi = ComputeGlobalImportance(list);
  for (std::size_t r = 0; r < 3; ++r) {
    const std::size_t j = gi.features[r] == "x" ? 0 : gi.features[r] == "y" ? 1 : 2;
    EXPECT_NEAR(gi.mean_abs_phi[r], expected[j], 1e-12);
  }
  list.back().feature_names = {"x", "y", "w"};
  try {
    ComputeGlobalImportance(list);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kHeterogeneousMask);
  }
}

TEST(ExportTest, BeeswarmShapeOrderAndRoundTrip) {
  const std::vector<Explanation> list{Handmade("b", {0.1, -0.9, 1.0 / 3.0}),
                                      Handmade("a", {0.2, 0.8, 0.0})};
  const auto rows = BeeswarmRows(list);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].feature, "y");
  EXPECT_EQ(rows[0].instance, "a");
  EXPECT_EQ(rows[1].instance, "b");
  EXPECT_EQ(rows[2].feature, "z");
  std::stringstream ss;
  WriteBeeswarmCsv(ss, list);
  const auto back = ReadBeeswarmCsv(ss);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].feature, rows[i].feature);
    EXPECT_EQ(back[i].instance, rows[i].instance);
    EXPECT_EQ(back[i].phi, rows[i].phi);
    EXPECT_EQ(back[i].value, rows[i].value);
  }
}

TEST(ExportTest, Waterfall) {
  const Explanation e = Handmade("a", {0.1, -0.7, 0.3});
  const auto rows = WaterfallRows(e);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].feature, "base");
  EXPECT_EQ(rows[0].cumulative, -0.25);
  EXPECT_EQ(rows[1].feature, "y");
  EXPECT_EQ(rows[2].feature, "z");
  EXPECT_NEAR(rows.back().cumulative, e.prediction_margin, 1e-12);
  const auto flat = WaterfallRows(Handmade("z", {0, 0, 0}));
  ASSERT_EQ(flat.size(), 1u);
  EXPECT_EQ(flat[0].cumulative, -0.25);
  std::stringstream ss;
  WriteWaterfallCsv(ss, e);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "step,feature,value,phi,cumulative,probability");
}

TEST(ExplainRowsTest, AutoModeAndParallelDeterminism) {
  Rng rng(29);
  Dataset d;
  d.feature_set = FeatureSet::Parse("C+N");
  d.feature_names = d.feature_set.Names();
  d.x = RandomIntegerRows(6, 16, rng);
  d.y = {0, 1, 0, 1, 0, 1};
  d.ids = {"p1", "p2", "p3", "p4", "p5", "p6"};
  std::vector<int> usable{0, 3, 5, 9};
  TrainedModel m = RandomTreeModel(16, usable, 4, 3, rng);
  m.feature_set = d.feature_set;
  m.feature_names = d.feature_names;
  const Matrix bg = RandomIntegerRows(10, 16, rng);
  ExplainOptions opts;
  opts.n_permutations = 100;
  opts.seed = 4;
  const auto a = ExplainRows(m, d, bg, opts);
  setenv("NUTRIPIPE_THREADS", "4", 1);
  const auto b = ExplainRows(m, d, bg, opts);
  unsetenv("NUTRIPIPE_THREADS");
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a[0].mode, ExplainMode::kSampled);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].phi, b[i].phi);
  EXPECT_EQ(SampleBackground(d.x, 4, 1).rows, 4u);
  EXPECT_EQ(SampleBackground(d.x, 40, 1).rows, 6u);
}

}  // namespace
}  // namespace nutripipe
