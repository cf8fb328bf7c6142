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
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "nutripipe/strings.hpp"

namespace nutripipe {

// Fixed 127-word English stopword list; identical to data/stopwords_en.txt.
inline constexpr std::array<std::string_view, 127> kStopwords{
    "i",       "me",         "my",      "myself",  "we",      "our",     "ours",
    "ourselves", "you",      "your",    "yours",   "yourself", "yourselves", "he",
    "him",     "his",        "himself", "she",     "her",     "hers",    "herself",
    "it",      "its",        "itself",  "they",    "them",    "their",   "theirs",
    "themselves", "what",    "which",   "who",     "whom",    "this",    "that",
    "these",   "those",      "am",      "is",      "are",     "was",     "were",
    "be",      "been",       "being",   "have",    "has",     "had",     "having",
    "do",      "does",       "did",     "doing",   "a",       "an",      "the",
    "and",     "but",        "if",      "or",      "because", "as",      "until",
    "while",   "of",         "at",      "by",      "for",     "with",    "about",
    "against", "between",    "into",    "through", "during",  "before",  "after",
    "above",   "below",      "to",      "from",    "up",      "down",    "in",
    "out",     "on",         "off",     "over",    "under",   "again",   "further",
    "then",    "once",       "here",    "there",   "when",    "where",   "why",
    "how",     "all",        "any",     "both",    "each",    "few",     "more",
    "most",    "other",      "some",    "such",    "no",      "nor",     "not",
    "only",    "own",        "same",    "so",      "than",    "too",     "very",
    "s",       "t",          "can",     "will",    "just",    "don",     "should",
    "now"};

inline bool IsStopword(std::string_view word) {
  static const std::unordered_set<std::string_view> kSet(kStopwords.begin(), kStopwords.end());
  return kSet.contains(word);
}

// Lowercases, then splits on whitespace and the punctuation kept by title
// cleaning (- & ( ) / , .). Leading/trailing apostrophes are stripped.
inline std::vector<std::string> Tokenize(std::string_view title) {
  std::vector<std::string> tokens;
  std::string current;
  const auto flush = [&] {
    std::string_view t = current;
    while (!t.empty() && t.front() == '\'') t.remove_prefix(1);
    while (!t.empty() && t.back() == '\'') t.remove_suffix(1);
    if (!t.empty()) tokens.emplace_back(t);
    current.clear();
  };
  for (char c : AsciiLower(title)) {
    const bool separator = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '-' ||
                           c == '&' || c == '(' || c == ')' || c == '/' || c == ',' || c == '.';
    if (separator) {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  return tokens;
}

// Suffix-stripping lemmatizer. Rules, first match wins after the possessive:
//   's            -> dropped
//   -ies (len>4)  -> -y                 berries -> berry
//   -sses -ches -shes -xes -zes -> drop "es"   dishes -> dish
//   -oes (stem >= 4) -> drop "es"       potatoes -> potato
//   -s (len>3, not -ss -us -is) -> drop  cakes -> cake
//   -ing (stem >= 3) -> drop            grilling -> grill
inline std::string Lemmatize(std::string_view word) {
  std::string w(word);
  if (EndsWith(w, "'s")) w.resize(w.size() - 2);
  const std::size_t n = w.size();
  if (n > 4 && EndsWith(w, "ies")) return w.substr(0, n - 3) + "y";
  for (std::string_view suffix : {"sses", "ches", "shes", "xes", "zes"}) {
    if (EndsWith(w, suffix) && n - 2 >= 3) return w.substr(0, n - 2);
  }
  if (EndsWith(w, "oes") && n - 2 >= 4) return w.substr(0, n - 2);
  if (n > 3 && EndsWith(w, "s") && !EndsWith(w, "ss") && !EndsWith(w, "us") &&
      !EndsWith(w, "is")) {
    return w.substr(0, n - 1);
  }
  if (n >= 6 && EndsWith(w, "ing")) return w.substr(0, n - 3);
  return w;
}

inline bool HasLetter(std::string_view token) {
  for (char32_t cp : DecodeUtf8(token)) {
    if (IsLetter(cp)) return true;
  }
  return false;
}

// Tokens for discriminator mining: stopwords (checked on the surface form)
// and letterless tokens removed, the rest lemmatized.
inline std::vector<std::string> ContentLemmas(std::string_view title) {
  std::vector<std::string> out;
  for (const std::string& token : Tokenize(title)) {
    if (IsStopword(token) || !HasLetter(token)) continue;
    std::string lemma = Lemmatize(token);
    if (lemma.empty() || IsStopword(lemma)) continue;
    out.push_back(std::move(lemma));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Food descriptors and categories
// ---------------------------------------------------------------------------

struct DescriptorTerm {
  std::string_view feature;  // feature name
  std::string_view term;
};

struct FoodCategory {
  std::string_view feature;
  std::vector<std::string_view> keywords;
};

struct DescriptorLexicon {
  std::vector<DescriptorTerm> descriptors;  // 15: preparation, taste, texture
  std::vector<FoodCategory> categories;     // 6

  static const DescriptorLexicon& Default() {
    static const DescriptorLexicon kLexicon{
        {
            {"prep_grilled", "grilled"},   {"prep_fried", "fried"},
            {"prep_baked", "baked"},       {"prep_boiled", "boiled"},
            {"prep_steamed", "steamed"},   {"taste_savory", "savory"},
            {"taste_sweet", "sweet"},      {"taste_spicy", "spicy"},
            {"taste_rich", "rich"},        {"taste_salty", "salty"},
            {"texture_creamy", "creamy"},  {"texture_crispy", "crispy"},
            {"texture_tender", "tender"},  {"texture_juicy", "juicy"},
            {"texture_crunchy", "crunchy"},
        },
        {
            {"cat_main_dish", {"pasta", "casserole", "roast", "chicken", "stirfry"}},
            {"cat_dessert",
             {"cake", "custard", "pudding", "cookie", "pancake", "waffle", "muffin", "biscuit"}},
            {"cat_fast_food", {"pizza", "burger", "burrito"}},
            {"cat_healthy", {"soup", "salad"}},
            {"cat_plant_based", {"vegan", "vegetarian", "veggie"}},
            {"cat_pastry", {"bread", "croissant"}},
        }};
    return kLexicon;
  }

  std::size_t size() const { return descriptors.size() + categories.size(); }
};

inline constexpr std::size_t kDescriptorFlagCount = 21;

// A term fires when it equals a whole token, the token's lemma, or the token
// without a trailing "s" (cookies -> cookie). Never matches inside a word.
inline std::vector<std::uint8_t> MatchDescriptors(std::string_view title_clean,
                                                  const DescriptorLexicon& lexicon =
                                                      DescriptorLexicon::Default()) {
  std::unordered_set<std::string> forms;
  for (const std::string& token : Tokenize(title_clean)) {
    forms.insert(token);
    forms.insert(Lemmatize(token));
    if (token.size() > 1 && token.back() == 's') forms.insert(token.substr(0, token.size() - 1));
  }
  std::vector<std::uint8_t> flags;
  flags.reserve(lexicon.size());
  for (const auto& d : lexicon.descriptors) {
    flags.push_back(forms.contains(std::string(d.term)) ? 1 : 0);
  }
  for (const auto& c : lexicon.categories) {
    const bool hit = std::any_of(c.keywords.begin(), c.keywords.end(), [&](std::string_view k) {
      return forms.contains(std::string(k));
    });
    flags.push_back(hit ? 1 : 0);
  }
  return flags;
}

inline std::vector<std::string> DescriptorFeatureNames(
    const DescriptorLexicon& lexicon = DescriptorLexicon::Default()) {
  std::vector<std::string> names;
  for (const auto& d : lexicon.descriptors) names.emplace_back(d.feature);
  for (const auto& c : lexicon.categories) names.emplace_back(c.feature);
  return names;
}

}  // namespace nutripipe
