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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "nlohmann/json.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/stats.hpp"
#include "nutripipe/text.hpp"

namespace nutripipe {

struct DiscriminatorWord {
  std::string word;
  double chi2 = 0.0;
  double p_value = 1.0;
  double freq = 0.0;  // fraction of all task posts containing the word
};

struct DiscriminatorConfig {
  double cutoff = 0.01;
  double alpha = 0.05;
  std::size_t top_words = 100;
};

struct DiscriminatorSet {
  std::vector<DiscriminatorWord> positive;
  std::vector<DiscriminatorWord> negative;
  double cutoff = 0.01;
  double alpha = 0.05;
};

namespace detail {

inline std::vector<std::set<std::string>> LemmaSets(const std::vector<std::string>& titles) {
  std::vector<std::set<std::string>> sets;
  sets.reserve(titles.size());
  for (const auto& t : titles) {
    const auto lemmas = ContentLemmas(t);
    sets.emplace_back(lemmas.begin(), lemmas.end());
  }
  return sets;
}

inline std::map<std::string, std::int64_t> DocumentFrequency(
    const std::vector<std::set<std::string>>& sets) {
  std::map<std::string, std::int64_t> df;
  for (const auto& s : sets) {
    for (const auto& w : s) ++df[w];
  }
  return df;
}

inline std::vector<std::string> TopWords(const std::map<std::string, std::int64_t>& df,
                                         std::size_t k) {
  std::vector<std::pair<std::string, std::int64_t>> items(df.begin(), df.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  if (items.size() > k) items.resize(k);
  std::vector<std::string> words;
  for (auto& [w, n] : items) words.push_back(w);
  return words;
}

}  // namespace detail

// pos/neg are cleaned titles of the two label groups (training posts only).
inline DiscriminatorSet MineDiscriminators(const std::vector<std::string>& titles_pos,
                                           const std::vector<std::string>& titles_neg,
                                           const DiscriminatorConfig& config = {}) {
  if (titles_pos.empty() || titles_neg.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "discriminator mining needs both groups");
  }
  if (!(config.cutoff >= 0.0 && config.cutoff <= 1.0) ||
      !(config.alpha > 0.0 && config.alpha <= 1.0)) {
    throw Error(ErrorCode::kConfig, "cutoff must be in [0,1] and alpha in (0,1]");
  }
  const auto pos_sets = detail::LemmaSets(titles_pos);
  const auto neg_sets = detail::LemmaSets(titles_neg);
  const auto df_pos = detail::DocumentFrequency(pos_sets);
  const auto df_neg = detail::DocumentFrequency(neg_sets);

  std::set<std::string> candidates;
  for (auto& w : detail::TopWords(df_pos, config.top_words)) candidates.insert(w);
  for (auto& w : detail::TopWords(df_neg, config.top_words)) candidates.insert(w);

  const auto n_pos = static_cast<std::int64_t>(titles_pos.size());
  const auto n_neg = static_cast<std::int64_t>(titles_neg.size());
  const double total = static_cast<double>(n_pos + n_neg);

  DiscriminatorSet result;
  result.cutoff = config.cutoff;
  result.alpha = config.alpha;
  for (const std::string& word : candidates) {
    const auto find = [&](const auto& df) {
      auto it = df.find(word);
      return it == df.end() ? std::int64_t{0} : it->second;
    };
    const std::int64_t a = find(df_pos), c = find(df_neg);
    const std::int64_t b = n_pos - a, d = n_neg - c;
    if (a + c == 0 || b + d == 0) continue;  // word in no post or in every post
    const StatResult chi = ChiSquare2x2(a, b, c, d);
    if (!(chi.p_value < config.alpha)) continue;
    DiscriminatorWord entry{word, chi.statistic, chi.p_value, static_cast<double>(a + c) / total};
    if (entry.freq + 1e-12 < config.cutoff) continue;
    const double rel_pos = static_cast<double>(a) / static_cast<double>(n_pos);
    const double rel_neg = static_cast<double>(c) / static_cast<double>(n_neg);
    if (rel_pos > rel_neg) {
      result.positive.push_back(std::move(entry));
    } else if (rel_neg > rel_pos) {
      result.negative.push_back(std::move(entry));
    }
  }
  const auto by_strength = [](const DiscriminatorWord& x, const DiscriminatorWord& y) {
    if (x.chi2 != y.chi2) return x.chi2 > y.chi2;
    return x.word < y.word;
  };
  std::sort(result.positive.begin(), result.positive.end(), by_strength);
  std::sort(result.negative.begin(), result.negative.end(), by_strength);
  return result;
}

struct DiscriminatorFlagPair {
  std::uint8_t has_positive = 0;
  std::uint8_t has_negative = 0;
};

class DiscriminatorMatcher {
 public:
  explicit DiscriminatorMatcher(const DiscriminatorSet& set) {
    for (const auto& w : set.positive) positive_.insert(w.word);
    for (const auto& w : set.negative) negative_.insert(w.word);
  }

  DiscriminatorFlagPair Flags(std::string_view title_clean) const {
    DiscriminatorFlagPair flags;
    for (const std::string& lemma : ContentLemmas(title_clean)) {
      if (positive_.contains(lemma)) flags.has_positive = 1;
      if (negative_.contains(lemma)) flags.has_negative = 1;
    }
    return flags;
  }

 private:
  std::unordered_set<std::string> positive_;
  std::unordered_set<std::string> negative_;
};

inline DiscriminatorFlagPair DiscriminatorFlags(std::string_view title_clean,
                                                const DiscriminatorSet& set) {
  return DiscriminatorMatcher(set).Flags(title_clean);
}

inline nlohmann::json DiscriminatorsToJson(const DiscriminatorSet& set) {
  const auto words = [](const std::vector<DiscriminatorWord>& list) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& w : list) {
      arr.push_back({{"word", w.word}, {"chi2", w.chi2}, {"p", w.p_value}, {"freq", w.freq}});
    }
    return arr;
  };
  return {{"positive", words(set.positive)},
          {"negative", words(set.negative)},
          {"cutoff", set.cutoff},
          {"alpha", set.alpha}};
}

inline DiscriminatorSet DiscriminatorsFromJson(const nlohmann::json& j) {
  DiscriminatorSet set;
  try {
    const auto words = [](const nlohmann::json& arr) {
      std::vector<DiscriminatorWord> out;
      for (const auto& e : arr) {
        DiscriminatorWord w;
        w.word = e.at("word").get<std::string>();
        w.chi2 = e.at("chi2").get<double>();
        w.p_value = e.value("p", 0.0);
        w.freq = e.at("freq").get<double>();
        out.push_back(std::move(w));
      }
      return out;
    };
    set.positive = words(j.at("positive"));
    set.negative = words(j.at("negative"));
    set.cutoff = j.at("cutoff").get<double>();
    set.alpha = j.at("alpha").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMissingRequiredKey, std::string("discriminator json: ") + e.what());
  }
  return set;
}

inline void SaveDiscriminators(const std::filesystem::path& path, const DiscriminatorSet& set) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << DiscriminatorsToJson(set).dump(2) << '\n';
}

inline DiscriminatorSet LoadDiscriminators(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("bad discriminator file: ") + e.what());
  }
  return DiscriminatorsFromJson(j);
}

}  // namespace nutripipe
