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
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nutripipe/csv.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/strings.hpp"

namespace nutripipe {

enum class FoodSource { kFoundationFoods, kSRLegacy, kFNDDS, kOther };

inline std::string_view FoodSourceName(FoodSource source) {
  switch (source) {
    case FoodSource::kFoundationFoods: return "FoundationFoods";
    case FoodSource::kSRLegacy: return "SRLegacy";
    case FoodSource::kFNDDS: return "FNDDS";
    case FoodSource::kOther: return "Other";
  }
  return "Other";
}

// Unknown source labels map to kOther rather than failing the row.
inline FoodSource ParseFoodSource(std::string_view text) {
  const std::string lower = AsciiLower(Trim(text));
  if (lower == "foundationfoods" || lower == "foundation_foods" || lower == "foundation")
    return FoodSource::kFoundationFoods;
  if (lower == "srlegacy" || lower == "sr_legacy" || lower == "sr legacy")
    return FoodSource::kSRLegacy;
  if (lower == "fndds") return FoodSource::kFNDDS;
  return FoodSource::kOther;
}

// One food-composition entry. All densities are per 100 g of food.
struct FoodItem {
  std::string id;
  std::string description;
  double kcal = 0.0;
  double protein_g = 0.0;
  double carb_g = 0.0;
  double fat_g = 0.0;
  FoodSource source = FoodSource::kOther;

  bool operator==(const FoodItem&) const = default;
};

struct DensityCheck {
  bool valid = true;
  std::vector<std::string> violations;
  // Macronutrient grams summing above 105 g are reported but do not
  // invalidate the item.
  bool macro_sum_flag = false;
};

inline constexpr double kMacroSumFlagGrams = 105.0;

inline DensityCheck ValidateDensityBounds(const FoodItem& item) {
  DensityCheck check;
  const auto violate = [&](std::string what) {
    check.valid = false;
    check.violations.push_back(std::move(what));
  };
  if (!(item.kcal >= 0.0)) violate("kcal >= 0");
  const std::array<std::pair<const char*, double>, 3> macros{
      {{"protein_g", item.protein_g}, {"carb_g", item.carb_g}, {"fat_g", item.fat_g}}};
  for (const auto& [name, grams] : macros) {
    if (!(grams >= 0.0)) violate(std::string(name) + " >= 0");
    if (!(grams <= 100.0)) violate(std::string(name) + " <= 100");
  }
  if (Trim(item.description).empty()) violate("description non-empty");
  check.macro_sum_flag = item.protein_g + item.carb_g + item.fat_g > kMacroSumFlagGrams;
  return check;
}

struct RejectedRow {
  std::size_t record = 0;  // 1-based CSV record number, header is record 1
  ErrorCode reason = ErrorCode::kBadNumeric;
  std::string detail;
};

struct FoodLoadReport {
  std::vector<RejectedRow> rejected;
  std::vector<std::string> warnings;
  std::size_t macro_sum_flagged = 0;

  std::size_t CountRejected(ErrorCode reason) const {
    std::size_t n = 0;
    for (const auto& r : rejected) n += r.reason == reason ? 1 : 0;
    return n;
  }
};

// Immutable after load; iteration follows the source file order.
class FoodDatabase {
 public:
  FoodDatabase() = default;

  explicit FoodDatabase(std::vector<FoodItem> items) {
    for (auto& item : items) {
      const std::string id = item.id;
      if (!Add(std::move(item))) {
        throw Error(ErrorCode::kDuplicateId, "duplicate food id " + id);
      }
    }
  }

  const std::vector<FoodItem>& items() const { return items_; }
  std::size_t count() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const FoodItem& operator[](std::size_t i) const { return items_[i]; }

  const FoodItem* Find(std::string_view id) const {
    const auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  static constexpr std::array<std::string_view, 7> kColumns{
      "id", "description", "kcal", "protein_g", "carb_g", "fat_g", "source"};

  static FoodDatabase Load(const std::string& path, FoodLoadReport* report = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIo, "cannot open food database " + path);
    return Load(in, report);
  }

  static FoodDatabase Load(std::istream& in, FoodLoadReport* report = nullptr) {
    FoodLoadReport local;
    FoodLoadReport& rep = report ? *report : local;
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.Next(row)) {
      throw Error(ErrorCode::kMissingColumn, "food database has no header row");
    }
    if (!row.empty() && StartsWith(row[0], "\xEF\xBB\xBF")) row[0].erase(0, 3);
    std::array<std::size_t, kColumns.size()> col{};
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      std::size_t found = row.size();
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (Trim(row[k]) == kColumns[c]) found = k;
      }
      if (found == row.size()) {
        throw Error(ErrorCode::kMissingColumn,
                    "header lacks column '" + std::string(kColumns[c]) + "'");
      }
      col[c] = found;
    }

    FoodDatabase db;
    while (reader.Next(row)) {
      const std::size_t record = reader.record_number();
      if (row.size() < kColumns.size()) {
        rep.rejected.push_back({record, ErrorCode::kBadNumeric, "too few fields"});
        continue;
      }
      FoodItem item;
      item.id = std::string(Trim(row[col[0]]));
      item.description = std::string(Trim(row[col[1]]));
      item.source = ParseFoodSource(row[col[6]]);
      double* targets[] = {&item.kcal, &item.protein_g, &item.carb_g, &item.fat_g};
      bool numeric_ok = true;
      for (std::size_t k = 0; k < 4; ++k) {
        if (!ParseDouble(row[col[2 + k]], *targets[k])) {
          rep.rejected.push_back({record, ErrorCode::kBadNumeric,
                                  std::string(kColumns[2 + k]) + "='" + row[col[2 + k]] + "'"});
          numeric_ok = false;
          break;
        }
      }
      if (!numeric_ok) continue;
      const DensityCheck check = ValidateDensityBounds(item);
      if (!check.valid || item.id.empty()) {
        std::string detail = item.id.empty() ? "empty id" : "";
        for (const auto& v : check.violations) detail += (detail.empty() ? "" : "; ") + v;
        rep.rejected.push_back({record, ErrorCode::kInvalidArgument, detail});
        continue;
      }
      if (check.macro_sum_flag) ++rep.macro_sum_flagged;
      const std::string id = item.id;
      if (!db.Add(std::move(item))) {
        rep.rejected.push_back({record, ErrorCode::kDuplicateId, id});
        rep.warnings.push_back("duplicate food id '" + id + "' at record " +
                               std::to_string(record) + " ignored");
      }
    }
    return db;
  }

  void Save(std::ostream& out) const {
    csv::WriteRow(out, {kColumns.begin(), kColumns.end()});
    for (const auto& item : items_) {
      csv::WriteRow(out, {item.id, item.description, FormatDouble(item.kcal),
                          FormatDouble(item.protein_g), FormatDouble(item.carb_g),
                          FormatDouble(item.fat_g), std::string(FoodSourceName(item.source))});
    }
  }

  void Save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
    Save(out);
  }

 private:
  bool Add(FoodItem item) {
    if (index_.contains(item.id)) return false;
    index_.emplace(item.id, items_.size());
    items_.push_back(std::move(item));
    return true;
  }

  std::vector<FoodItem> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace nutripipe
