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
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nlohmann/json.hpp"
#include "nutripipe/csv.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/random.hpp"
#include "nutripipe/strings.hpp"

namespace nutripipe {

enum class PostTag { kIAte, kHomemade, kProChef, kOtherOrMissing };

inline std::string_view PostTagName(PostTag tag) {
  switch (tag) {
    case PostTag::kIAte: return "IAte";
    case PostTag::kHomemade: return "Homemade";
    case PostTag::kProChef: return "ProChef";
    case PostTag::kOtherOrMissing: return "OtherOrMissing";
  }
  return "OtherOrMissing";
}

inline std::optional<PostTag> ParsePostTagName(std::string_view name) {
  for (PostTag t : {PostTag::kIAte, PostTag::kHomemade, PostTag::kProChef,
                    PostTag::kOtherOrMissing}) {
    if (PostTagName(t) == name) return t;
  }
  return std::nullopt;
}

// Case-insensitive containment on the flair text.
inline PostTag TagFromFlair(std::string_view flair) {
  const std::string lower = AsciiLower(flair);
  if (lower.find("i ate") != std::string::npos) return PostTag::kIAte;
  if (lower.find("homemade") != std::string::npos) return PostTag::kHomemade;
  if (lower.find("pro/chef") != std::string::npos) return PostTag::kProChef;
  return PostTag::kOtherOrMissing;
}

struct PostRecord {
  std::string id;
  std::string author;
  std::string title_raw;
  std::string title_clean;
  std::int64_t created_utc = 0;
  std::int64_t num_comments = 0;
  std::int64_t score = 0;
  PostTag tag = PostTag::kOtherOrMissing;

  bool operator==(const PostRecord&) const = default;
};

// Keeps Unicode letters, digits, whitespace and ' - & ( ) / , . ; every
// whitespace run becomes one space and the ends are trimmed.
inline std::string CleanTitle(std::string_view raw) {
  const std::u32string cps = DecodeUtf8(raw);
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char32_t cp : cps) {
    if (IsSpace(cp)) {
      pending_space = !out.empty();
      continue;
    }
    const bool keep = IsLetter(cp) || IsDigit(cp) || cp == U'\'' || cp == U'-' || cp == U'&' ||
                      cp == U'(' || cp == U')' || cp == U'/' || cp == U',' || cp == U'.';
    if (!keep) continue;
    if (pending_space) out.push_back(' ');
    pending_space = false;
    AppendUtf8(out, cp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct IngestIssue {
  std::size_t line = 0;
  ErrorCode reason = ErrorCode::kInvalidArgument;
  std::string detail;
};

struct IngestReport {
  std::size_t lines = 0;
  std::vector<IngestIssue> issues;

  std::size_t CountIssues(ErrorCode reason) const {
    std::size_t n = 0;
    for (const auto& i : issues) n += i.reason == reason ? 1 : 0;
    return n;
  }
};

namespace detail {

inline std::optional<std::int64_t> JsonToInt(const nlohmann::json& value) {
  if (value.is_number_integer()) return value.get<std::int64_t>();
  if (value.is_number_float()) {
    const double d = value.get<double>();
    if (!std::isfinite(d)) return std::nullopt;
    return static_cast<std::int64_t>(std::floor(d));
  }
  if (value.is_string()) {
    std::int64_t out = 0;
    if (ParseInt(value.get<std::string>(), out)) return out;
    double d = 0;
    if (ParseDouble(value.get<std::string>(), d)) return static_cast<std::int64_t>(std::floor(d));
  }
  return std::nullopt;
}

inline std::string JsonToString(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_null()) return "";
  return value.dump();
}

}  // namespace detail

// JSON Lines; required keys id, author, title, created_utc, num_comments;
// optional score and link_flair_text. Bad lines are skipped and reported.
inline std::vector<PostRecord> IngestPosts(std::istream& in, IngestReport* report = nullptr) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  std::vector<PostRecord> posts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    ++rep.lines;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      rep.issues.push_back({line_no, ErrorCode::kInvalidArgument, "invalid JSON"});
      continue;
    }
    if (!obj.is_object()) {
      rep.issues.push_back({line_no, ErrorCode::kInvalidArgument, "not a JSON object"});
      continue;
    }
    bool missing = false;
    for (const char* key : {"id", "author", "title", "created_utc", "num_comments"}) {
      if (!obj.contains(key) || obj[key].is_null()) {
        rep.issues.push_back({line_no, ErrorCode::kMissingRequiredKey, key});
        missing = true;
        break;
      }
    }
    if (missing) continue;
    PostRecord post;
    post.id = detail::JsonToString(obj["id"]);
    post.author = detail::JsonToString(obj["author"]);
    post.title_raw = detail::JsonToString(obj["title"]);
    const auto created = detail::JsonToInt(obj["created_utc"]);
    const auto comments = detail::JsonToInt(obj["num_comments"]);
    if (!created || *created <= 0 || !comments || *comments < 0) {
      rep.issues.push_back({line_no, ErrorCode::kInvalidArgument,
                            "created_utc must be > 0 and num_comments >= 0"});
      continue;
    }
    post.created_utc = *created;
    post.num_comments = *comments;
    if (obj.contains("score")) post.score = detail::JsonToInt(obj["score"]).value_or(0);
    if (obj.contains("link_flair_text")) {
      post.tag = TagFromFlair(detail::JsonToString(obj["link_flair_text"]));
    }
    post.title_clean = CleanTitle(post.title_raw);
    posts.push_back(std::move(post));
  }
  return posts;
}

inline std::vector<PostRecord> IngestPosts(const std::string& path, IngestReport* report = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open posts file " + path);
  return IngestPosts(in, report);
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kDuplicateWindowSeconds = 300;

struct FilterReport {
  std::size_t input = 0;
  std::size_t removed_empty_title = 0;
  std::size_t removed_deleted_title = 0;
  std::size_t removed_deleted_author = 0;
  std::size_t removed_duplicate = 0;
  std::size_t output = 0;
};

struct PreprocessResult {
  std::vector<PostRecord> posts;
  FilterReport report;
};

// Drops empty/deleted posts, then duplicates: same author and title_clean
// within 300 s of the earliest retained post of the chain. Survivors keep
// input order.
inline PreprocessResult Preprocess(const std::vector<PostRecord>& input) {
  PreprocessResult result;
  result.report.input = input.size();
  std::vector<PostRecord> kept;
  kept.reserve(input.size());
  for (const PostRecord& original : input) {
    PostRecord post = original;
    post.title_clean = CleanTitle(post.title_raw);
    const std::string_view raw = Trim(post.title_raw);
    if (raw == "[deleted]" || raw == "[removed]") {
      ++result.report.removed_deleted_title;
    } else if (raw.empty() || post.title_clean.empty()) {
      ++result.report.removed_empty_title;
    } else if (Trim(post.author) == "[deleted]") {
      ++result.report.removed_deleted_author;
    } else {
      kept.push_back(std::move(post));
    }
  }

  std::vector<std::size_t> order(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return kept[a].created_utc < kept[b].created_utc;
  });
  std::vector<bool> drop(kept.size(), false);
  std::map<std::pair<std::string, std::string>, std::int64_t> anchor;
  for (std::size_t i : order) {
    const auto key = std::make_pair(kept[i].author, kept[i].title_clean);
    const auto it = anchor.find(key);
    if (it != anchor.end() && kept[i].created_utc - it->second <= kDuplicateWindowSeconds) {
      drop[i] = true;
      ++result.report.removed_duplicate;
    } else {
      anchor[key] = kept[i].created_utc;
    }
  }
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (!drop[i]) result.posts.push_back(std::move(kept[i]));
  }
  result.report.output = result.posts.size();
  return result;
}

// ---------------------------------------------------------------------------
// Time helpers and control features
// ---------------------------------------------------------------------------

// Days since 1970-01-01 for a proleptic Gregorian date (H. Hinnant's
// days_from_civil).
constexpr std::int64_t DaysFromCivil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2 ? 1 : 0;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

// Accepts YYYY-MM-DD, optionally followed by THH:MM[:SS] and a trailing Z.
inline std::int64_t ParseIsoTimestamp(std::string_view text) {
  text = Trim(text);
  const auto fail = [&]() -> std::int64_t {
    throw Error(ErrorCode::kConfig, "bad ISO timestamp '" + std::string(text) + "'");
  };
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return fail();
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (!ParseInt(text.substr(0, 4), y) || !ParseInt(text.substr(5, 2), mo) ||
      !ParseInt(text.substr(8, 2), d) || mo < 1 || mo > 12 || d < 1 || d > 31) {
    return fail();
  }
  std::string_view rest = text.substr(10);
  if (!rest.empty() && rest.back() == 'Z') rest.remove_suffix(1);
  if (!rest.empty()) {
    if ((rest[0] != 'T' && rest[0] != ' ') || rest.size() < 6 || rest[3] != ':') return fail();
    if (!ParseInt(rest.substr(1, 2), h) || !ParseInt(rest.substr(4, 2), mi)) return fail();
    if (rest.size() >= 9) {
      if (rest[6] != ':' || !ParseInt(rest.substr(7, 2), s)) return fail();
    }
    if (h > 23 || mi > 59 || s > 60) return fail();
  }
  return DaysFromCivil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

inline std::string FormatIsoDate(std::int64_t ts) {
  // civil_from_days
  std::int64_t z = (ts >= 0 ? ts : ts - 86399) / 86400 + 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2 ? 1 : 0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02u", static_cast<long long>(y), m, d);
  return buf;
}

// 0 = Monday ... 6 = Sunday, in UTC.
inline int UtcWeekday(std::int64_t ts) {
  const std::int64_t days = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
  return static_cast<int>(((days + 3) % 7 + 7) % 7);  // 1970-01-01 was a Thursday
}

inline int UtcHour(std::int64_t ts) {
  return static_cast<int>(((ts % 86400) + 86400) % 86400 / 3600);
}

enum class DayQuartile { kQ1, kQ2, kQ3, kQ4 };
enum class CovidPeriod { kPre, kDuring, kPost };

// Q1 [0,6), Q2 [6,12), Q3 [12,18), Q4 [18,24) UTC hours.
inline DayQuartile QuartileOfHour(int utc_hour) {
  return static_cast<DayQuartile>(std::clamp(utc_hour, 0, 23) / 6);
}

struct CovidBounds {
  std::int64_t during_start = DaysFromCivil(2020, 3, 1) * 86400;
  std::int64_t post_start = DaysFromCivil(2021, 7, 1) * 86400;
};

// Half-open: [during_start, post_start) is During.
inline CovidPeriod CovidPeriodOf(std::int64_t ts, const CovidBounds& bounds) {
  if (ts < bounds.during_start) return CovidPeriod::kPre;
  if (ts < bounds.post_start) return CovidPeriod::kDuring;
  return CovidPeriod::kPost;
}

struct ControlFeatures {
  bool is_weekend = false;
  CovidPeriod covid_period = CovidPeriod::kPre;
  bool is_experienced_user = false;
  DayQuartile day_quartile = DayQuartile::kQ1;
  PostTag tag = PostTag::kOtherOrMissing;

  bool operator==(const ControlFeatures&) const = default;
};

struct ExperiencedUsers {
  std::set<std::string> authors;
  std::int64_t min_posts = 0;  // post-count threshold c

  bool Contains(const std::string& author) const { return authors.contains(author); }
};

inline ControlFeatures DeriveControls(const PostRecord& post, const ExperiencedUsers& experienced,
                                      const CovidBounds& bounds) {
  if (bounds.post_start < bounds.during_start) {
    throw Error(ErrorCode::kInvalidArgument, "covid bounds out of order");
  }
  ControlFeatures c;
  const int weekday = UtcWeekday(post.created_utc);
  c.is_weekend = weekday >= 5;
  c.covid_period = CovidPeriodOf(post.created_utc, bounds);
  c.is_experienced_user = experienced.Contains(post.author);
  c.day_quartile = QuartileOfHour(UtcHour(post.created_utc));
  c.tag = post.tag;
  return c;
}

// Authors ranked by post count. c is the smallest count such that at most
// ceil(fraction * distinct_authors) authors have >= c posts; the set is
// every author with >= c posts. If even the top tie block exceeds the cap,
// the whole top block is taken.
inline ExperiencedUsers ExperiencedUserSet(const std::vector<PostRecord>& posts,
                                           double top_fraction = 0.05) {
  if (posts.empty()) throw Error(ErrorCode::kInvalidArgument, "no posts");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "top_fraction must lie in (0,1]");
  }
  std::map<std::string, std::int64_t> counts;
  for (const auto& p : posts) ++counts[p.author];
  const auto cap = static_cast<std::size_t>(
      std::ceil(top_fraction * static_cast<double>(counts.size()) - 1e-9));
  // Authors per count, descending.
  std::map<std::int64_t, std::size_t, std::greater<>> per_count;
  for (const auto& [author, n] : counts) ++per_count[n];
  std::int64_t threshold = per_count.begin()->first;
  std::size_t cumulative = 0;
  for (const auto& [n, authors] : per_count) {
    if (cumulative + authors > cap) break;
    cumulative += authors;
    threshold = n;
  }
  ExperiencedUsers out;
  out.min_posts = threshold;
  for (const auto& [author, n] : counts) {
    if (n >= threshold) out.authors.insert(author);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

struct LabelSet {
  bool engagement = false;
  std::optional<bool> resonance;

  bool operator==(const LabelSet&) const = default;
};

struct LabelResult {
  std::vector<LabelSet> labels;  // aligned with the input posts
  std::int64_t resonance_threshold = 0;
  std::size_t resonant = 0;
  std::size_t non_resonant_candidates = 0;
  std::vector<std::size_t> resonance_subset;  // ascending post indices
};

// Comment count at 1-based rank floor(q*n)+1 of the ascending counts.
inline std::int64_t ResonanceThreshold(const std::vector<PostRecord>& posts,
                                       double resonant_quantile) {
  if (posts.empty()) throw Error(ErrorCode::kInvalidArgument, "no posts to label");
  std::vector<std::int64_t> counts;
  counts.reserve(posts.size());
  for (const auto& p : posts) counts.push_back(p.num_comments);
  std::sort(counts.begin(), counts.end());
  const std::size_t n = counts.size();
  const auto rank = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::floor(resonant_quantile * static_cast<double>(n) + 1e-9)) + 1);
  return counts[rank - 1];
}

// Engagement = at least one comment. Resonant = comment count at or above the
// value at 1-based rank floor(q*n)+1 (top 1% for q = 0.99); an equal number of
// posts with <= 1 comment is sampled as the non-resonant class.
inline LabelResult BuildLabels(const std::vector<PostRecord>& posts, double resonant_quantile,
                               std::uint64_t seed) {
  if (posts.empty()) throw Error(ErrorCode::kInvalidArgument, "no posts to label");
  if (!(resonant_quantile > 0.0 && resonant_quantile < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "resonant_quantile must lie in (0,1)");
  }
  LabelResult out;
  out.labels.resize(posts.size());
  out.resonance_threshold = ResonanceThreshold(posts, resonant_quantile);

  std::vector<std::size_t> resonant, candidates;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    out.labels[i].engagement = posts[i].num_comments >= 1;
    if (posts[i].num_comments >= out.resonance_threshold) {
      resonant.push_back(i);
    } else if (posts[i].num_comments <= 1) {
      candidates.push_back(i);
    }
  }
  out.resonant = resonant.size();
  out.non_resonant_candidates = candidates.size();
  if (candidates.size() < resonant.size()) {
    throw Error(ErrorCode::kNotEnoughNonResonant,
                std::to_string(candidates.size()) + " non-resonant candidates for " +
                    std::to_string(resonant.size()) + " resonant posts");
  }
  Rng rng(seed);
  for (std::size_t i : resonant) {
    out.labels[i].resonance = true;
    out.resonance_subset.push_back(i);
  }
  for (std::size_t k : rng.SampleWithoutReplacement(candidates.size(), resonant.size())) {
    out.labels[candidates[k]].resonance = false;
    out.resonance_subset.push_back(candidates[k]);
  }
  std::sort(out.resonance_subset.begin(), out.resonance_subset.end());
  return out;
}

// ---------------------------------------------------------------------------
// Canonical post table
// ---------------------------------------------------------------------------

struct LabeledPost {
  PostRecord post;
  LabelSet labels;

  bool operator==(const LabeledPost&) const = default;
};

inline constexpr std::array<std::string_view, 9> kPostTableColumns{
    "id", "author", "title_clean", "created_utc", "num_comments",
    "score", "tag", "engagement", "resonance"};

inline void WritePostTable(std::ostream& out, const std::vector<LabeledPost>& rows) {
  csv::WriteRow(out, {kPostTableColumns.begin(), kPostTableColumns.end()});
  for (const auto& r : rows) {
    const std::string resonance =
        r.labels.resonance ? (*r.labels.resonance ? "1" : "0") : std::string();
    csv::WriteRow(out, {r.post.id, r.post.author, r.post.title_clean,
                        std::to_string(r.post.created_utc), std::to_string(r.post.num_comments),
                        std::to_string(r.post.score), std::string(PostTagName(r.post.tag)),
                        r.labels.engagement ? "1" : "0", resonance});
  }
}

// Reads a table written by WritePostTable. title_raw is set to title_clean.
inline std::vector<LabeledPost> ReadPostTable(std::istream& in) {
  csv::Reader reader(in);
  std::vector<std::string> row;
  if (!reader.Next(row) || row.size() != kPostTableColumns.size()) {
    throw Error(ErrorCode::kMissingColumn, "post table header mismatch");
  }
  std::vector<LabeledPost> out;
  while (reader.Next(row)) {
    if (row.size() != kPostTableColumns.size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "post table record " + std::to_string(reader.record_number()) + " malformed");
    }
    LabeledPost r;
    r.post.id = row[0];
    r.post.author = row[1];
    r.post.title_clean = row[2];
    r.post.title_raw = row[2];
    const auto tag = ParsePostTagName(row[6]);
    if (!ParseInt(row[3], r.post.created_utc) || !ParseInt(row[4], r.post.num_comments) ||
        !ParseInt(row[5], r.post.score) || !tag) {
      throw Error(ErrorCode::kBadNumeric,
                  "post table record " + std::to_string(reader.record_number()));
    }
    r.post.tag = *tag;
    r.labels.engagement = row[7] == "1";
    if (!row[8].empty()) r.labels.resonance = row[8] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace nutripipe
