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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nutripipe/corpus.hpp"
#include "nutripipe/discriminators.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/matcher.hpp"
#include "nutripipe/strings.hpp"
#include "nutripipe/text.hpp"

namespace nutripipe {

// Blocks in their fixed column order.
enum class FeatureBlock { kNutrition, kDescriptors, kDiscriminators, kControls };

inline constexpr std::size_t kNutritionWidth = 4;
inline constexpr std::size_t kDescriptorWidth = kDescriptorFlagCount;
inline constexpr std::size_t kDiscriminatorWidth = 2;
inline constexpr std::size_t kControlWidth = 12;
inline constexpr std::size_t kFullFeatureWidth =
    kNutritionWidth + kDescriptorWidth + kDiscriminatorWidth + kControlWidth;

inline constexpr std::size_t BlockOffset(FeatureBlock block) {
  switch (block) {
    case FeatureBlock::kNutrition: return 0;
    case FeatureBlock::kDescriptors: return kNutritionWidth;
    case FeatureBlock::kDiscriminators: return kNutritionWidth + kDescriptorWidth;
    case FeatureBlock::kControls: return kNutritionWidth + kDescriptorWidth + kDiscriminatorWidth;
  }
  return 0;
}

inline constexpr std::size_t BlockWidth(FeatureBlock block) {
  switch (block) {
    case FeatureBlock::kNutrition: return kNutritionWidth;
    case FeatureBlock::kDescriptors: return kDescriptorWidth;
    case FeatureBlock::kDiscriminators: return kDiscriminatorWidth;
    case FeatureBlock::kControls: return kControlWidth;
  }
  return 0;
}

inline const std::vector<std::string>& FullFeatureNames() {
  static const std::vector<std::string> kNames = [] {
    std::vector<std::string> names{"kcal", "protein_g", "carb_g", "fat_g"};
    for (auto& n : DescriptorFeatureNames()) names.push_back(n);
    names.insert(names.end(), {"has_positive_discriminator", "has_negative_discriminator",
                               "is_weekend", "covid_pre", "covid_during", "covid_post",
                               "experienced_user", "quartile_q1", "quartile_q2", "quartile_q3",
                               "quartile_q4", "tag_i_ate", "tag_homemade", "tag_pro_chef"});
    return names;
  }();
  return kNames;
}

// Controls are always present; the other three blocks are optional.
struct FeatureSet {
  bool nutrition = false;
  bool descriptors = false;
  bool discriminators = false;

  bool Has(FeatureBlock block) const {
    switch (block) {
      case FeatureBlock::kNutrition: return nutrition;
      case FeatureBlock::kDescriptors: return descriptors;
      case FeatureBlock::kDiscriminators: return discriminators;
      case FeatureBlock::kControls: return true;
    }
    return false;
  }

  std::string Label() const {
    std::string label = "C";
    if (nutrition) label += "+N";
    if (descriptors) label += "+F";
    if (discriminators) label += "+E";
    return label;
  }

  // Indices into the full 39-column layout, in fixed order.
  std::vector<std::size_t> Columns() const {
    std::vector<std::size_t> cols;
    for (FeatureBlock b : {FeatureBlock::kNutrition, FeatureBlock::kDescriptors,
                           FeatureBlock::kDiscriminators, FeatureBlock::kControls}) {
      if (!Has(b)) continue;
      for (std::size_t i = 0; i < BlockWidth(b); ++i) cols.push_back(BlockOffset(b) + i);
    }
    return cols;
  }

  std::vector<std::string> Names() const {
    std::vector<std::string> names;
    for (std::size_t c : Columns()) names.push_back(FullFeatureNames()[c]);
    return names;
  }

  std::size_t Width() const { return Columns().size(); }

  bool operator==(const FeatureSet&) const = default;

  // Accepts "C", "C+N", "C+N+F+E", ... in any block order; C is mandatory.
  static FeatureSet Parse(std::string_view label) {
    FeatureSet fs;
    bool has_c = false;
    for (const std::string& part : Split(label, '+')) {
      const std::string p(Trim(part));
      bool* slot = nullptr;
      if (p == "C") {
        if (has_c) throw Error(ErrorCode::kConfig, "repeated block in feature set: " + p);
        has_c = true;
        continue;
      }
      if (p == "N") slot = &fs.nutrition;
      if (p == "F") slot = &fs.descriptors;
      if (p == "E") slot = &fs.discriminators;
      if (slot == nullptr || *slot) {
        throw Error(ErrorCode::kConfig, "bad feature set label: " + std::string(label));
      }
      *slot = true;
    }
    if (!has_c) throw Error(ErrorCode::kConfig, "feature set must include C: " + std::string(label));
    return fs;
  }

  // C, C+N, C+F, C+E, C+N+F, C+N+E, C+F+E, C+N+F+E.
  static std::vector<FeatureSet> All() {
    return {{false, false, false}, {true, false, false}, {false, true, false},
            {false, false, true},  {true, true, false},  {true, false, true},
            {false, true, true},   {true, true, true}};
  }
};

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> Row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> Row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& At(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double At(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// A labelled design matrix over the columns of one feature set.
struct Dataset {
  FeatureSet feature_set;
  std::vector<std::string> feature_names;
  Matrix x;
  std::vector<std::uint8_t> y;
  std::vector<std::string> ids;

  std::size_t size() const { return x.rows; }
  std::size_t width() const { return x.cols; }

  Dataset Subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.feature_set = feature_set;
    out.feature_names = feature_names;
    out.x = Matrix(rows.size(), x.cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = x.Row(rows[r]);
      std::copy(src.begin(), src.end(), out.x.Row(r).begin());
      if (!y.empty()) out.y.push_back(y[rows[r]]);
      if (!ids.empty()) out.ids.push_back(ids[rows[r]]);
    }
    return out;
  }
};

using FullFeatureRow = std::array<double, kFullFeatureWidth>;

// Encodes one post. The tag block is all zero for OtherOrMissing.
inline FullFeatureRow BuildFeatureRow(const NutritionEstimate& nutrition,
                                      std::span<const std::uint8_t> descriptor_flags,
                                      DiscriminatorFlagPair discriminators,
                                      const ControlFeatures& controls) {
  if (descriptor_flags.size() != kDescriptorWidth) {
    throw Error(ErrorCode::kInvalidArgument, "descriptor flag count must be 21");
  }
  FullFeatureRow row{};
  row[0] = nutrition.kcal;
  row[1] = nutrition.protein_g;
  row[2] = nutrition.carb_g;
  row[3] = nutrition.fat_g;
  std::size_t k = BlockOffset(FeatureBlock::kDescriptors);
  for (std::uint8_t f : descriptor_flags) row[k++] = f;
  k = BlockOffset(FeatureBlock::kDiscriminators);
  row[k++] = discriminators.has_positive;
  row[k++] = discriminators.has_negative;
  k = BlockOffset(FeatureBlock::kControls);
  row[k] = controls.is_weekend ? 1 : 0;
  row[k + 1 + static_cast<std::size_t>(controls.covid_period)] = 1;
  row[k + 4] = controls.is_experienced_user ? 1 : 0;
  row[k + 5 + static_cast<std::size_t>(controls.day_quartile)] = 1;
  if (controls.tag != PostTag::kOtherOrMissing) {
    row[k + 9 + static_cast<std::size_t>(controls.tag)] = 1;
  }
  return row;
}

// Projects full-width rows onto a feature set; inactive blocks are dropped.
inline Dataset ProjectFeatures(const std::vector<FullFeatureRow>& rows,
                               const std::vector<std::uint8_t>& labels,
                               const std::vector<std::string>& ids, const FeatureSet& fs) {
  if (labels.size() != rows.size() || (!ids.empty() && ids.size() != rows.size())) {
    throw Error(ErrorCode::kInvalidArgument, "feature rows, labels and ids differ in length");
  }
  Dataset d;
  d.feature_set = fs;
  d.feature_names = fs.Names();
  const std::vector<std::size_t> cols = fs.Columns();
  d.x = Matrix(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) d.x.At(r, j) = rows[r][cols[j]];
  }
  d.y = labels;
  d.ids = ids;
  return d;
}

}  // namespace nutripipe
