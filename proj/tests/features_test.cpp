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


#include "nutripipe/features.hpp"

#include <numeric>

#include "gtest/gtest.h"

namespace nutripipe {
namespace {

TEST(FeatureSetTest, LabelsAndParsing) {
  std::vector<std::string> labels;
  for (const auto& fs : FeatureSet::All()) labels.push_back(fs.Label());
  const std::vector<std::string> expected{"C",     "C+N",   "C+F",   "C+E",
                                          "C+N+F", "C+N+E", "C+F+E", "C+N+F+E"};
  EXPECT_EQ(labels, expected);
  for (const auto& fs : FeatureSet::All()) EXPECT_EQ(FeatureSet::Parse(fs.Label()), fs);
  EXPECT_EQ(FeatureSet::Parse("E+C+N").Label(), "C+N+E");
  EXPECT_THROW(FeatureSet::Parse("N+E"), Error);
  EXPECT_THROW(FeatureSet::Parse("C+N+N"), Error);
  EXPECT_THROW(FeatureSet::Parse("C+X"), Error);
}

TEST(FeatureSetTest, WidthsAndOrder) {
  EXPECT_EQ(FullFeatureNames().size(), 39u);
  EXPECT_EQ(FeatureSet::Parse("C").Width(), 12u);
  EXPECT_EQ(FeatureSet::Parse("C+N").Width(), 16u);
  EXPECT_EQ(FeatureSet::Parse("C+N+F+E").Width(), 39u);
  const auto names = FeatureSet::Parse("C+N+E").Names();
  EXPECT_EQ(names[0], "kcal");
  EXPECT_EQ(names[4], "has_positive_discriminator");
  EXPECT_EQ(names[6], "is_weekend");
  EXPECT_EQ(names.back(), "tag_pro_chef");
}

TEST(FeatureRowTest, OneHotBlocks) {
  NutritionEstimate est;
  est.kcal = 250;
  est.protein_g = 10;
  est.carb_g = 30;
  est.fat_g = 9;
  ControlFeatures c;
  c.is_weekend = true;
  c.covid_period = CovidPeriod::kDuring;
  c.day_quartile = DayQuartile::kQ3;
  c.tag = PostTag::kHomemade;
  const auto flags = MatchDescriptors("grilled chicken salad");
  const FullFeatureRow row = BuildFeatureRow(est, flags, {1, 0}, c);
  const auto& names = FullFeatureNames();
  const auto value = [&](std::string_view n) {
    return row[std::find(names.begin(), names.end(), n) - names.begin()];
  };
  EXPECT_EQ(value("kcal"), 250);
  EXPECT_EQ(value("fat_g"), 9);
  EXPECT_EQ(value("prep_grilled"), 1);
  EXPECT_EQ(value("cat_healthy"), 1);
  EXPECT_EQ(value("has_positive_discriminator"), 1);
  EXPECT_EQ(value("has_negative_discriminator"), 0);
  EXPECT_EQ(value("is_weekend"), 1);
  EXPECT_EQ(value("covid_during"), 1);
  EXPECT_EQ(value("covid_pre") + value("covid_post"), 0);
  EXPECT_EQ(value("experienced_user"), 0);
  EXPECT_EQ(value("quartile_q3"), 1);
  EXPECT_EQ(value("tag_homemade"), 1);
  const std::size_t c0 = BlockOffset(FeatureBlock::kControls);
  EXPECT_EQ(row[c0 + 1] + row[c0 + 2] + row[c0 + 3], 1);
  EXPECT_EQ(row[c0 + 5] + row[c0 + 6] + row[c0 + 7] + row[c0 + 8], 1);

  c.tag = PostTag::kOtherOrMissing;
  const FullFeatureRow other = BuildFeatureRow(est, flags, {0, 0}, c);
  EXPECT_EQ(other[c0 + 9] + other[c0 + 10] + other[c0 + 11], 0);
  EXPECT_THROW(BuildFeatureRow(est, std::vector<std::uint8_t>(3), {}, c), Error);
}

TEST(ProjectTest, InactiveBlocksAbsent) {
  std::vector<FullFeatureRow> rows(2);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t j = 0; j < kFullFeatureWidth; ++j) rows[r][j] = 100.0 * r + j;
  }
  const Dataset d = ProjectFeatures(rows, {0, 1}, {"a", "b"}, FeatureSet::Parse("C+E"));
  ASSERT_EQ(d.width(), 14u);
  EXPECT_EQ(d.x.At(0, 0), 25.0);  // first discriminator column
  EXPECT_EQ(d.x.At(1, 2), 127.0);  // first control column
  EXPECT_EQ(d.feature_names[0], "has_positive_discriminator");
  const std::vector<std::size_t> pick{1};
  const Dataset s = d.Subset(pick);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s.ids[0], "b");
  EXPECT_EQ(s.y[0], 1);
  EXPECT_THROW(ProjectFeatures(rows, {0}, {}, FeatureSet{}), Error);
}

}  // namespace
}  // namespace nutripipe
