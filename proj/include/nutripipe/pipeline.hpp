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
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nlohmann/json.hpp"
#include "nutripipe/config.hpp"
#include "nutripipe/corpus.hpp"
#include "nutripipe/csv.hpp"
#include "nutripipe/cv.hpp"
#include "nutripipe/discriminators.hpp"
#include "nutripipe/embeddings.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/explain.hpp"
#include "nutripipe/features.hpp"
#include "nutripipe/food_db.hpp"
#include "nutripipe/gbt.hpp"
#include "nutripipe/hash.hpp"
#include "nutripipe/matcher.hpp"
#include "nutripipe/metrics.hpp"
#include "nutripipe/stats.hpp"
#include "nutripipe/text.hpp"

namespace nutripipe {

enum class Stage {
  kIngestDb,
  kIngestPosts,
  kCalibrate,
  kEstimate,
  kFeaturize,
  kMineDiscriminators,
  kTune,
  kTrain,
  kEvaluate,
  kExplain,
  kReport,
};

inline constexpr std::array<Stage, 11> kAllStages{
    Stage::kIngestDb, Stage::kIngestPosts,        Stage::kCalibrate, Stage::kEstimate,
    Stage::kFeaturize, Stage::kMineDiscriminators, Stage::kTune,      Stage::kTrain,
    Stage::kEvaluate, Stage::kExplain,            Stage::kReport};

inline std::string_view StageName(Stage stage) {
  switch (stage) {
    case Stage::kIngestDb: return "ingest-db";
    case Stage::kIngestPosts: return "ingest-posts";
    case Stage::kCalibrate: return "calibrate";
    case Stage::kEstimate: return "estimate";
    case Stage::kFeaturize: return "featurize";
    case Stage::kMineDiscriminators: return "mine-discriminators";
    case Stage::kTune: return "tune";
    case Stage::kTrain: return "train";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kExplain: return "explain";
    case Stage::kReport: return "report";
  }
  return "unknown";
}

inline Stage ParseStage(std::string_view name) {
  for (Stage s : kAllStages) {
    if (StageName(s) == name) return s;
  }
  throw Error(ErrorCode::kConfig, "unknown stage '" + std::string(name) + "'");
}

// A stage failed; the cause keeps the underlying error code.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, ErrorCode cause, const std::string& message)
      : Error(ErrorCode::kStageFailure, stage + ": " + message),
        stage_(std::move(stage)),
        cause_(cause) {}

  const std::string& stage() const noexcept { return stage_; }
  ErrorCode cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  ErrorCode cause_;
};

inline bool IsDataError(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
    case ErrorCode::kMissingColumn:
    case ErrorCode::kBadNumeric:
    case ErrorCode::kDuplicateId:
    case ErrorCode::kBadMagic:
    case ErrorCode::kDimMismatch:
    case ErrorCode::kTruncatedFile:
    case ErrorCode::kEmptySample:
    case ErrorCode::kMissingVector:
    case ErrorCode::kMissingRequiredKey:
    case ErrorCode::kNotEnoughNonResonant:
      return true;
    default:
      return false;
  }
}

// 2 configuration, 3 input data, 4 any other stage failure.
inline int ExitCodeFor(const Error& error) {
  ErrorCode code = error.code();
  if (const auto* stage = dynamic_cast<const StageFailure*>(&error)) code = stage->cause();
  if (code == ErrorCode::kConfig) return 2;
  if (IsDataError(code)) return 3;
  return 4;
}

// ---------------------------------------------------------------------------
// Artifact layout of a run directory
// ---------------------------------------------------------------------------

namespace artifacts {

inline constexpr std::string_view kManifest = "manifest.json";
inline constexpr std::string_view kConfig = "config.ini";
inline constexpr std::string_view kFoodDb = "food_db.csv";
inline constexpr std::string_view kDbReport = "db_report.json";
inline constexpr std::string_view kPosts = "posts.csv";
inline constexpr std::string_view kIngestReport = "ingest_report.json";
inline constexpr std::string_view kCalibration = "calibration.json";
inline constexpr std::string_view kEstimates = "estimates.csv";
inline constexpr std::string_view kEstimateReport = "estimate_report.json";
inline constexpr std::string_view kDatasetReport = "dataset_report.json";
inline constexpr std::string_view kReportDir = "report";

inline std::string Slug(const FeatureSet& fs) {
  std::string s = fs.Label();
  for (char& c : s) {
    if (c == '+') c = '_';
  }
  return s;
}

inline std::string Features(Task t) { return "features_" + std::string(TaskName(t)) + ".csv"; }
inline std::string Discriminators(Task t) {
  return "discriminators_" + std::string(TaskName(t)) + ".json";
}
inline std::string Tuning(Task t) { return "tuning_" + std::string(TaskName(t)) + ".json"; }
inline std::string Model(Task t, const FeatureSet& fs) {
  return "models/" + std::string(TaskName(t)) + "/" + Slug(fs) + ".json";
}
inline std::string Results(Task t) { return "results_" + std::string(TaskName(t)) + ".csv"; }
inline std::string ExplainFile(Task t, const FeatureSet& fs, std::string_view file) {
  return "explain/" + std::string(TaskName(t)) + "/" + Slug(fs) + "/" + std::string(file);
}

}  // namespace artifacts

namespace detail {

inline void WriteFile(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << bytes;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

inline void WriteJson(const std::filesystem::path& path, const nlohmann::json& j) {
  WriteFile(path, j.dump(2) + "\n");
}

inline nlohmann::json ReadJson(const std::filesystem::path& path) {
  const std::string bytes = ReadFileBytes(path.string());
  try {
    return nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
}

inline std::ifstream OpenInput(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return in;
}

inline nlohmann::json GbtConfigToJson(const GbtConfig& c) {
  return {{"n_estimators", c.n_estimators},
          {"max_depth", c.max_depth},
          {"learning_rate", c.learning_rate},
          {"lambda", c.lambda},
          {"min_child_weight", c.min_child_weight}};
}

inline GbtConfig GbtConfigFromJson(const nlohmann::json& j) {
  GbtConfig c;
  c.n_estimators = j.at("n_estimators").get<int>();
  c.max_depth = j.at("max_depth").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.min_child_weight = j.at("min_child_weight").get<double>();
  return c;
}

inline std::string UtcNow() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Per-task feature table
// ---------------------------------------------------------------------------

// Rows of one classification task. The discriminator block stays zero on
// disk; it is filled from the mined set of the same task.
struct TaskTable {
  std::vector<std::string> ids;
  std::vector<std::string> titles;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> is_test;
  std::vector<FullFeatureRow> rows;

  std::size_t size() const { return ids.size(); }

  std::vector<std::size_t> Indices(bool test) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
      if (static_cast<bool>(is_test[i]) == test) out.push_back(i);
    }
    return out;
  }
};

inline std::vector<std::size_t> StoredFeatureColumns() {
  std::vector<std::size_t> cols;
  const std::size_t e0 = BlockOffset(FeatureBlock::kDiscriminators);
  for (std::size_t j = 0; j < kFullFeatureWidth; ++j) {
    if (j < e0 || j >= e0 + BlockWidth(FeatureBlock::kDiscriminators)) cols.push_back(j);
  }
  return cols;
}

inline void WriteTaskTable(std::ostream& out, const TaskTable& table) {
  const auto cols = StoredFeatureColumns();
  std::vector<std::string> header{"id", "split", "label", "title_clean"};
  for (std::size_t j : cols) header.push_back(FullFeatureNames()[j]);
  csv::WriteRow(out, header);
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::vector<std::string> row{table.ids[i], table.is_test[i] ? "test" : "train",
                                 table.labels[i] ? "1" : "0", table.titles[i]};
    for (std::size_t j : cols) row.push_back(FormatDouble(table.rows[i][j]));
    csv::WriteRow(out, row);
  }
}

inline TaskTable ReadTaskTable(std::istream& in) {
  const auto cols = StoredFeatureColumns();
  csv::Reader reader(in);
  std::vector<std::string> row;
  if (!reader.Next(row) || row.size() != 4 + cols.size()) {
    throw Error(ErrorCode::kMissingColumn, "feature table header mismatch");
  }
  TaskTable t;
  while (reader.Next(row)) {
    const std::string where = "feature record " + std::to_string(reader.record_number());
    if (row.size() != 4 + cols.size() || (row[1] != "train" && row[1] != "test") ||
        (row[2] != "0" && row[2] != "1")) {
      throw Error(ErrorCode::kInvalidArgument, where + " malformed");
    }
    FullFeatureRow values{};
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (!ParseDouble(row[4 + k], values[cols[k]])) throw Error(ErrorCode::kBadNumeric, where);
    }
    t.ids.push_back(row[0]);
    t.is_test.push_back(row[1] == "test" ? 1 : 0);
    t.labels.push_back(row[2] == "1" ? 1 : 0);
    t.titles.push_back(row[3]);
    t.rows.push_back(values);
  }
  return t;
}

inline void ApplyDiscriminators(TaskTable& table, const DiscriminatorSet& set) {
  const DiscriminatorMatcher matcher(set);
  const std::size_t e0 = BlockOffset(FeatureBlock::kDiscriminators);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const DiscriminatorFlagPair f = matcher.Flags(table.titles[i]);
    table.rows[i][e0] = f.has_positive ? 1 : 0;
    table.rows[i][e0 + 1] = f.has_negative ? 1 : 0;
  }
}

inline Dataset TaskDataset(const TaskTable& table, const std::vector<std::size_t>& rows,
                           const FeatureSet& fs) {
  std::vector<FullFeatureRow> x;
  std::vector<std::uint8_t> y;
  std::vector<std::string> ids;
  x.reserve(rows.size());
  for (std::size_t i : rows) {
    x.push_back(table.rows[i]);
    y.push_back(table.labels[i]);
    ids.push_back(table.ids[i]);
  }
  return ProjectFeatures(x, y, ids, fs);
}

// ---------------------------------------------------------------------------
// Modeling set: preprocessed posts that kept a nutrition estimate
// ---------------------------------------------------------------------------

struct ModelingSet {
  std::vector<PostRecord> all_posts;       // preprocessed corpus, file order
  std::vector<PostRecord> posts;           // with a retained estimate, file order
  std::vector<NutritionEstimate> nutrition;  // aligned with posts
};

inline ModelingSet LoadModelingSet(const std::filesystem::path& dir) {
  ModelingSet m;
  {
    auto in = detail::OpenInput(dir / artifacts::kPosts);
    for (auto& row : ReadPostTable(in)) m.all_posts.push_back(std::move(row.post));
  }
  std::map<std::string, NutritionEstimate> by_id;
  {
    auto in = detail::OpenInput(dir / artifacts::kEstimates);
    for (auto& row : ReadEstimatesCsv(in)) by_id.emplace(row.post_id, std::move(row.estimate));
  }
  for (const auto& p : m.all_posts) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end()) continue;
    m.posts.push_back(p);
    m.nutrition.push_back(it->second);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
};

// Equal-width bins over [low, high]; the last bin is closed, values outside
// are clamped into the end bins.
inline std::vector<HistogramBin> Histogram(std::span<const double> values, double low,
                                           double high, std::size_t bins) {
  if (!(low < high) || bins == 0) throw Error(ErrorCode::kInvalidArgument, "bad histogram range");
  std::vector<HistogramBin> out(bins);
  const double width = (high - low) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].low = low + width * static_cast<double>(b);
    out[b].high = b + 1 == bins ? high : low + width * static_cast<double>(b + 1);
  }
  for (double v : values) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - low) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++out[static_cast<std::size_t>(b)].count;
  }
  return out;
}

inline constexpr std::size_t kHistogramBins = 20;
inline constexpr std::array<std::string_view, 4> kNutrients{"kcal", "protein_g", "carb_g",
                                                            "fat_g"};

inline double NutrientOf(const NutritionEstimate& e, std::size_t k) {
  switch (k) {
    case 0: return e.kcal;
    case 1: return e.protein_g;
    case 2: return e.carb_g;
    default: return e.fat_g;
  }
}

struct ResultRow {
  std::string feature_set;
  double auc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

inline void WriteResultsCsv(std::ostream& out, const std::vector<ResultRow>& rows) {
  csv::WriteRow(out, {"feature_set", "auc", "ci_low", "ci_high"});
  for (const auto& r : rows) {
    csv::WriteRow(out, {r.feature_set, FormatDouble(r.auc), FormatDouble(r.ci_low),
                        FormatDouble(r.ci_high)});
  }
}

inline std::vector<ResultRow> ReadResultsCsv(std::istream& in) {
  csv::Reader reader(in);
  std::vector<std::string> row;
  if (!reader.Next(row) || row != std::vector<std::string>{"feature_set", "auc", "ci_low", "ci_high"}) {
    throw Error(ErrorCode::kMissingColumn, "results header mismatch");
  }
  std::vector<ResultRow> out;
  while (reader.Next(row)) {
    ResultRow r;
    if (row.size() != 4 || !ParseDouble(row[1], r.auc) || !ParseDouble(row[2], r.ci_low) ||
        !ParseDouble(row[3], r.ci_high)) {
      throw Error(ErrorCode::kBadNumeric, "results record " + std::to_string(reader.record_number()));
    }
    r.feature_set = row[0];
    out.push_back(std::move(r));
  }
  return out;
}

struct FunnelCounts {
  std::size_t collected = 0;
  std::size_t after_preprocessing = 0;
  std::size_t with_estimates = 0;
  std::size_t with_comments = 0;
  std::size_t resonant = 0;
};

namespace detail {

inline std::string Pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

inline std::string AucCell(const ResultRow& r) {
  return FormatFixed(r.auc, 3) + " [" + FormatFixed(r.ci_low, 3) + ", " + FormatFixed(r.ci_high, 3) +
         "]";
}

inline std::string PValueText(double p) {
  if (p < 1e-4) {
    std::ostringstream s;
    s.setf(std::ios::scientific);
    s.precision(2);
    s << p;
    return s.str();
  }
  return FormatFixed(p, 4);
}

}  // namespace detail

// Writes <dir>/report/. Every file is a pure function of the run artifacts.
inline void WriteReport(const std::filesystem::path& dir, const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  std::vector<std::string> required{std::string(artifacts::kIngestReport),
                                    std::string(artifacts::kPosts),
                                    std::string(artifacts::kCalibration),
                                    std::string(artifacts::kEstimates),
                                    std::string(artifacts::kEstimateReport),
                                    std::string(artifacts::kDatasetReport)};
  for (Task t : cfg.TaskList()) {
    required.push_back(artifacts::Features(t));
    required.push_back(artifacts::Tuning(t));
    required.push_back(artifacts::Results(t));
    if (cfg.explain) {
      for (const FeatureSet& set : cfg.ExplainSets()) {
        required.push_back(artifacts::ExplainFile(t, set, "importance.csv"));
      }
    }
  }
  for (const auto& name : required) {
    if (!fs::exists(dir / name)) throw Error(ErrorCode::kIncompleteRun, "missing " + name);
  }

  const fs::path out_dir = dir / artifacts::kReportDir;
  fs::create_directories(out_dir);
  const nlohmann::json ingest = detail::ReadJson(dir / artifacts::kIngestReport);
  const nlohmann::json calibration = detail::ReadJson(dir / artifacts::kCalibration);
  const nlohmann::json estimate = detail::ReadJson(dir / artifacts::kEstimateReport);
  const nlohmann::json dataset = detail::ReadJson(dir / artifacts::kDatasetReport);
  const ModelingSet m = LoadModelingSet(dir);

  FunnelCounts funnel;
  funnel.collected = ingest.at("collected").get<std::size_t>();
  funnel.after_preprocessing = ingest.at("after_preprocessing").get<std::size_t>();
  funnel.with_estimates = m.posts.size();
  for (const auto& p : m.posts) funnel.with_comments += p.num_comments >= 1 ? 1 : 0;
  funnel.resonant = dataset.at("resonant").get<std::size_t>();
  {
    std::ostringstream s;
    csv::WriteRow(s, {"stage", "posts"});
    csv::WriteRow(s, {"collected", std::to_string(funnel.collected)});
    csv::WriteRow(s, {"after_preprocessing", std::to_string(funnel.after_preprocessing)});
    csv::WriteRow(s, {"with_estimates", std::to_string(funnel.with_estimates)});
    csv::WriteRow(s, {"with_comments", std::to_string(funnel.with_comments)});
    csv::WriteRow(s, {"resonant", std::to_string(funnel.resonant)});
    detail::WriteFile(out_dir / "funnel.csv", s.str());
  }

  // Distributions of the estimated densities.
  std::array<std::vector<double>, 4> columns;
  for (const auto& e : m.nutrition) {
    for (std::size_t k = 0; k < 4; ++k) columns[k].push_back(NutrientOf(e, k));
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double lo = k == 0 ? cfg.low_kcal : 0.0;
    const double hi = k == 0 ? cfg.high_kcal : 100.0;
    std::ostringstream s;
    csv::WriteRow(s, {"bin_low", "bin_high", "count"});
    for (const auto& b : Histogram(columns[k], lo, hi, kHistogramBins)) {
      csv::WriteRow(s, {FormatDouble(b.low), FormatDouble(b.high), std::to_string(b.count)});
    }
    detail::WriteFile(out_dir / ("hist_" + std::string(kNutrients[k]) + ".csv"), s.str());
  }

  // Group comparisons and the score/comment correlation.
  struct StatLine {
    std::string test, comparison, variable;
    StatResult result;
    std::size_t n1 = 0, n2 = 0;
  };
  std::vector<StatLine> stat_lines;
  const auto compare_groups = [&](const std::string& comparison,
                                  const std::vector<std::array<double, 4>>& values,
                                  const std::vector<std::uint8_t>& group) {
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<double> a, b;
      for (std::size_t i = 0; i < values.size(); ++i) (group[i] ? a : b).push_back(values[i][k]);
      if (a.empty() || b.empty()) continue;
      stat_lines.push_back({"mann_whitney_u", comparison, std::string(kNutrients[k]),
                            MannWhitneyU(a, b), a.size(), b.size()});
    }
  };
  {
    std::vector<std::array<double, 4>> values;
    std::vector<std::uint8_t> engaged;
    for (std::size_t i = 0; i < m.posts.size(); ++i) {
      values.push_back({m.nutrition[i].kcal, m.nutrition[i].protein_g, m.nutrition[i].carb_g,
                        m.nutrition[i].fat_g});
      engaged.push_back(m.posts[i].num_comments >= 1 ? 1 : 0);
    }
    compare_groups("engaged_vs_not", values, engaged);
  }
  if (cfg.HasTask(Task::kResonance)) {
    auto in = detail::OpenInput(dir / artifacts::Features(Task::kResonance));
    const TaskTable table = ReadTaskTable(in);
    std::vector<std::array<double, 4>> values;
    for (const auto& row : table.rows) values.push_back({row[0], row[1], row[2], row[3]});
    compare_groups("resonant_vs_non_resonant", values, table.labels);
  }
  {
    std::vector<double> score, comments;
    for (const auto& p : m.posts) {
      score.push_back(static_cast<double>(p.score));
      comments.push_back(static_cast<double>(p.num_comments));
    }
    try {
      stat_lines.push_back({"spearman", "score_vs_comments", "score", SpearmanRho(score, comments),
                            score.size(), comments.size()});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kZeroVariance && e.code() != ErrorCode::kInvalidArgument) throw;
    }
  }
  {
    std::ostringstream s;
    csv::WriteRow(s, {"test", "comparison", "variable", "statistic", "p_value", "n1", "n2"});
    for (const auto& l : stat_lines) {
      csv::WriteRow(s, {l.test, l.comparison, l.variable, FormatDouble(l.result.statistic),
                        FormatDouble(l.result.p_value), std::to_string(l.n1),
                        std::to_string(l.n2)});
    }
    detail::WriteFile(out_dir / "stats.csv", s.str());
  }

  // AUC matrix, one column group per task.
  const std::vector<Task> tasks = cfg.TaskList();
  std::map<Task, std::map<std::string, ResultRow>> results;
  for (Task t : tasks) {
    auto in = detail::OpenInput(dir / artifacts::Results(t));
    for (const auto& r : ReadResultsCsv(in)) results[t][r.feature_set] = r;
  }
  {
    std::ostringstream s;
    std::vector<std::string> header{"feature_set"};
    for (Task t : tasks) {
      const std::string name(TaskName(t));
      header.insert(header.end(), {name + "_auc", name + "_ci_low", name + "_ci_high"});
    }
    csv::WriteRow(s, header);
    for (const FeatureSet& set : cfg.FeatureSets()) {
      std::vector<std::string> row{set.Label()};
      for (Task t : tasks) {
        const auto it = results[t].find(set.Label());
        if (it == results[t].end()) {
          row.insert(row.end(), {"", "", ""});
        } else {
          row.insert(row.end(), {FormatDouble(it->second.auc), FormatDouble(it->second.ci_low),
                                 FormatDouble(it->second.ci_high)});
        }
      }
      csv::WriteRow(s, row);
    }
    detail::WriteFile(out_dir / "auc_matrix.csv", s.str());
  }

  // Global importance tables.
  struct ImportanceTable {
    Task task;
    FeatureSet set;
    std::vector<std::pair<std::string, double>> rows;
  };
  std::vector<ImportanceTable> importance;
  if (cfg.explain) {
    for (Task t : tasks) {
      for (const FeatureSet& set : cfg.ExplainSets()) {
        const fs::path src = dir / artifacts::ExplainFile(t, set, "importance.csv");
        const std::string bytes = ReadFileBytes(src.string());
        detail::WriteFile(
            out_dir / ("importance_" + std::string(TaskName(t)) + "_" + artifacts::Slug(set) + ".csv"),
            bytes);
        ImportanceTable table{t, set, {}};
        std::istringstream in(bytes);
        csv::Reader reader(in);
        std::vector<std::string> row;
        reader.Next(row);
        while (reader.Next(row)) {
          double v = 0.0;
          if (row.size() != 3 || !ParseDouble(row[2], v)) {
            throw Error(ErrorCode::kBadNumeric, "importance record in " + src.string());
          }
          table.rows.emplace_back(row[1], v);
        }
        importance.push_back(std::move(table));
      }
    }
  }

  // Human-readable summary.
  std::ostringstream txt;
  txt << "nutripipe report\n\n";
  txt << "Data filtering\n";
  const std::pair<const char*, std::size_t> funnel_rows[] = {
      {"Collected posts", funnel.collected},
      {"Posts after preprocessing", funnel.after_preprocessing},
      {"Posts with macronutrient estimates", funnel.with_estimates},
      {"Posts with comments", funnel.with_comments},
      {"Resonant posts", funnel.resonant}};
  for (const auto& [label, n] : funnel_rows) {
    txt << "  " << detail::Pad(label, 38) << n << "\n";
  }
  txt << "\nNutrition estimates\n";
  txt << "  similarity threshold " << FormatFixed(calibration.at("threshold").get<double>(), 2)
      << " (median per-post quantile "
      << FormatFixed(calibration.at("median_quantile").get<double>(), 4) << ", "
      << calibration.at("sample_size_used").get<std::size_t>() << " sampled titles)\n";
  txt << "  no match " << estimate.at("no_match").get<std::size_t>() << ", below "
      << FormatDouble(cfg.low_kcal) << " kCal " << estimate.at("below").get<std::size_t>()
      << ", above " << FormatDouble(cfg.high_kcal) << " kCal "
      << estimate.at("above").get<std::size_t>() << "\n";
  for (std::size_t k = 0; k < 4; ++k) {
    if (columns[k].empty()) continue;
    std::vector<double> sorted = columns[k];
    std::sort(sorted.begin(), sorted.end());
    const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) /
                        static_cast<double>(sorted.size());
    txt << "  " << detail::Pad(std::string(kNutrients[k]), 10) << "mean "
        << FormatFixed(mean, 2) << "  median " << FormatFixed(Median(sorted), 2) << "\n";
  }
  txt << "\nStatistics\n";
  for (const auto& l : stat_lines) {
    if (l.test == "spearman") {
      txt << "  score vs comments: Spearman rho " << FormatFixed(l.result.statistic, 3) << ", p "
          << detail::PValueText(l.result.p_value) << " (n " << l.n1 << ")\n";
    } else {
      txt << "  " << detail::Pad(l.variable, 10) << l.comparison << ": U "
          << FormatFixed(l.result.statistic, 1) << ", p " << detail::PValueText(l.result.p_value)
          << " (n " << l.n1 << " vs " << l.n2 << ")\n";
    }
  }
  txt << "\nModel configuration\n";
  for (Task t : tasks) {
    const nlohmann::json tuning = detail::ReadJson(dir / artifacts::Tuning(t));
    const GbtConfig c = detail::GbtConfigFromJson(tuning.at("best"));
    txt << "  " << detail::Pad(std::string(TaskName(t)), 12) << c.n_estimators
        << " estimators, depth " << c.max_depth << ", learning rate "
        << FormatDouble(c.learning_rate);
    if (tuning.at("tuned").get<bool>()) {
      txt << " (tuned, CV AUC " << FormatFixed(tuning.at("best_auc").get<double>(), 3) << ")";
    } else {
      txt << " (fixed)";
    }
    txt << "\n";
  }
  txt << "\nROC-AUC with " << FormatDouble(cfg.level * 100.0) << "% bootstrap CI\n";
  txt << "  " << detail::Pad("features", 10);
  for (Task t : tasks) txt << detail::Pad(std::string(TaskName(t)), 24);
  txt << "\n";
  for (const FeatureSet& set : cfg.FeatureSets()) {
    txt << "  " << detail::Pad(set.Label(), 10);
    for (Task t : tasks) {
      const auto it = results[t].find(set.Label());
      txt << detail::Pad(it == results[t].end() ? "-" : detail::AucCell(it->second), 24);
    }
    txt << "\n";
  }
  for (const auto& table : importance) {
    txt << "\nGlobal importance, " << TaskName(table.task) << " " << table.set.Label()
        << " (mean |SHAP|, log-odds)\n";
    const std::size_t shown = std::min<std::size_t>(10, table.rows.size());
    for (std::size_t r = 0; r < shown; ++r) {
      txt << "  " << detail::Pad(std::to_string(r + 1) + ".", 5)
          << detail::Pad(table.rows[r].first, 30) << FormatFixed(table.rows[r].second, 4) << "\n";
    }
  }
  detail::WriteFile(out_dir / "report.txt", txt.str());
}

// ---------------------------------------------------------------------------
// Pipeline runner
// ---------------------------------------------------------------------------

struct StageOutcome {
  Stage stage;
  bool cached = false;
};

struct RunResult {
  std::filesystem::path dir;
  std::vector<StageOutcome> stages;

  bool Ran(Stage stage) const {
    for (const auto& s : stages) {
      if (s.stage == stage) return !s.cached;
    }
    return false;
  }
};

// Runs stages in order. A stage is skipped when its fingerprint (settings,
// seed and input hashes) matches the manifest and its recorded outputs are
// intact; a stage whose artifact was removed reruns and its dependants rerun
// only if the regenerated content differs.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config) : cfg_(std::move(config)) {}

  const PipelineConfig& config() const { return cfg_; }
  std::filesystem::path dir() const { return cfg_.out_dir; }

  RunResult Run(Stage until = Stage::kReport) {
    cfg_.Validate();
    if (cfg_.food_db.empty()) throw Error(ErrorCode::kConfig, "paths.food_db is not set");
    if (cfg_.posts.empty()) throw Error(ErrorCode::kConfig, "paths.posts is not set");
    if (cfg_.out_dir.empty()) throw Error(ErrorCode::kConfig, "paths.out_dir is not set");
    std::filesystem::create_directories(dir());
    detail::WriteFile(dir() / artifacts::kConfig, ConfigToIni(cfg_));
    LoadManifest();
    RunResult result;
    result.dir = dir();
    for (Stage stage : kAllStages) {
      result.stages.push_back({stage, Execute(stage)});
      if (stage == until) break;
    }
    return result;
  }

  std::uint64_t StageSeed(Stage stage) const { return DeriveSeed(cfg_.seed, StageName(stage)); }

 private:
  struct Plan {
    std::vector<std::pair<std::string, std::string>> inputs;  // label, path
    std::string settings;
    std::vector<std::string> outputs;  // relative to the run directory
    std::function<nlohmann::json()> body;
  };

  std::string Rel(std::string_view name) const { return (dir() / name).string(); }

  void LoadManifest() {
    manifest_ = nlohmann::json::object();
    const auto path = dir() / artifacts::kManifest;
    if (std::filesystem::exists(path)) {
      try {
        manifest_ = detail::ReadJson(path);
      } catch (const Error&) {
        manifest_ = nlohmann::json::object();
      }
    }
    if (!manifest_.is_object() || manifest_.value("format", "") != "nutripipe-manifest") {
      manifest_ = nlohmann::json::object();
    }
    manifest_["format"] = "nutripipe-manifest";
    manifest_["version"] = 1;
    manifest_["master_seed"] = cfg_.seed;
    if (!manifest_.contains("stages")) manifest_["stages"] = nlohmann::json::object();
    if (!manifest_.contains("excluded")) {
      manifest_["excluded"] = {{"completed_utc", nlohmann::json::object()}};
    }
    nlohmann::json order = nlohmann::json::array();
    for (Stage s : kAllStages) order.push_back(StageName(s));
    manifest_["stage_order"] = order;
  }

  void SaveManifest() const {
    const auto path = dir() / artifacts::kManifest;
    const auto tmp = dir() / "manifest.json.tmp";
    detail::WriteJson(tmp, manifest_);
    std::filesystem::rename(tmp, path);
  }

  bool OutputsIntact(const nlohmann::json& entry) const {
    if (!entry.contains("outputs")) return false;
    for (const auto& [name, hash] : entry["outputs"].items()) {
      const auto path = dir() / name;
      if (!std::filesystem::exists(path)) return false;
      if (HashFile(path.string()) != hash.get<std::string>()) return false;
    }
    return true;
  }

  bool Execute(Stage stage) {
    const std::string name(StageName(stage));
    try {
      Plan plan = MakePlan(stage);
      nlohmann::json inputs = nlohmann::json::object();
      std::string fingerprint_text = name + "\n" + plan.settings + "\nseed=" +
                                     std::to_string(StageSeed(stage)) + "\n";
      for (const auto& [label, path] : plan.inputs) {
        const std::string h = HashFile(path);
        inputs[label] = h;
        fingerprint_text += label + "=" + h + "\n";
      }
      const std::string fingerprint = ToHex(Fnv1a64(fingerprint_text));
      nlohmann::json& entry = manifest_["stages"][name];
      if (entry.is_object() && entry.value("fingerprint", "") == fingerprint &&
          OutputsIntact(entry)) {
        return true;
      }
      entry = nullptr;
      SaveManifest();
      const nlohmann::json counts = plan.body();
      nlohmann::json outputs = nlohmann::json::object();
      for (const auto& out : plan.outputs) {
        const auto path = dir() / out;
        if (!std::filesystem::exists(path)) {
          throw Error(ErrorCode::kIo, "stage did not produce " + out);
        }
        outputs[out] = HashFile(path.string());
      }
      manifest_["stages"][name] = {{"fingerprint", fingerprint},
                                   {"seed", ToHex(StageSeed(stage))},
                                   {"inputs", inputs},
                                   {"outputs", outputs},
                                   {"counts", counts}};
      manifest_["excluded"]["completed_utc"][name] = detail::UtcNow();
      SaveManifest();
      return false;
    } catch (const StageFailure&) {
      throw;
    } catch (const Error& e) {
      throw StageFailure(name, e.code(), e.what());
    } catch (const std::exception& e) {
      throw StageFailure(name, ErrorCode::kStageFailure, e.what());
    }
  }

  std::string Settings(std::initializer_list<std::string_view> keys) const {
    // The INI lines for the given keys, in order.
    PipelineConfig copy = cfg_;
    std::map<std::string, std::string> values;
    detail::VisitConfig(copy, [&](const char* key, auto& field) {
      values[key] = detail::FormatValue(field);
    });
    std::string out;
    for (std::string_view k : keys) {
      const auto it = values.find(std::string(k));
      if (it == values.end()) throw Error(ErrorCode::kInvalidArgument, "no config key " + std::string(k));
      out += it->first + "=" + it->second + "\n";
    }
    return out;
  }

  std::vector<std::pair<std::string, std::string>> VectorInputs() const {
    if (cfg_.vectors.empty()) return {};
    return {{"vectors", cfg_.vectors}};
  }

  Plan MakePlan(Stage stage) {
    switch (stage) {
      case Stage::kIngestDb: return PlanIngestDb();
      case Stage::kIngestPosts: return PlanIngestPosts();
      case Stage::kCalibrate: return PlanCalibrate();
      case Stage::kEstimate: return PlanEstimate();
      case Stage::kFeaturize: return PlanFeaturize();
      case Stage::kMineDiscriminators: return PlanMine();
      case Stage::kTune: return PlanTune();
      case Stage::kTrain: return PlanTrain();
      case Stage::kEvaluate: return PlanEvaluate();
      case Stage::kExplain: return PlanExplain();
      case Stage::kReport: return PlanReport();
    }
    throw Error(ErrorCode::kInvalidArgument, "unknown stage");
  }

  Plan PlanIngestDb() {
    Plan p;
    p.inputs = {{"food_db", cfg_.food_db}};
    p.outputs = {std::string(artifacts::kFoodDb), std::string(artifacts::kDbReport)};
    p.body = [this] {
      FoodLoadReport report;
      const FoodDatabase db = FoodDatabase::Load(cfg_.food_db, &report);
      db.Save(Rel(artifacts::kFoodDb));
      nlohmann::json counts{{"items", db.count()},
                            {"rejected", report.rejected.size()},
                            {"bad_numeric", report.CountRejected(ErrorCode::kBadNumeric)},
                            {"duplicate_id", report.CountRejected(ErrorCode::kDuplicateId)},
                            {"macro_sum_flagged", report.macro_sum_flagged}};
      detail::WriteJson(dir() / artifacts::kDbReport, counts);
      return counts;
    };
    return p;
  }

  Plan PlanIngestPosts() {
    Plan p;
    p.inputs = {{"posts", cfg_.posts}};
    p.settings = Settings({"corpus.resonant_quantile"});
    p.outputs = {std::string(artifacts::kPosts), std::string(artifacts::kIngestReport)};
    p.body = [this] {
      IngestReport ingest;
      const std::vector<PostRecord> raw = IngestPosts(cfg_.posts, &ingest);
      const PreprocessResult pre = Preprocess(raw);
      std::vector<LabeledPost> rows;
      rows.reserve(pre.posts.size());
      bool resonance_labeled = false;
      std::optional<LabelResult> labels;
      if (!pre.posts.empty()) {
        try {
          labels = BuildLabels(pre.posts, cfg_.resonant_quantile,
                               DeriveSeed(StageSeed(Stage::kIngestPosts), "labels"));
          resonance_labeled = true;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kNotEnoughNonResonant) throw;
        }
      }
      for (std::size_t i = 0; i < pre.posts.size(); ++i) {
        LabeledPost r{pre.posts[i], {}};
        r.labels.engagement = pre.posts[i].num_comments >= 1;
        if (labels) r.labels = labels->labels[i];
        rows.push_back(std::move(r));
      }
      std::ostringstream table;
      WritePostTable(table, rows);
      detail::WriteFile(dir() / artifacts::kPosts, table.str());
      const auto& f = pre.report;
      nlohmann::json counts{{"lines", ingest.lines},
                            {"collected", raw.size()},
                            {"malformed", ingest.issues.size()},
                            {"missing_required_key",
                             ingest.CountIssues(ErrorCode::kMissingRequiredKey)},
                            {"removed_empty_title", f.removed_empty_title},
                            {"removed_deleted_title", f.removed_deleted_title},
                            {"removed_deleted_author", f.removed_deleted_author},
                            {"removed_duplicate", f.removed_duplicate},
                            {"after_preprocessing", f.output},
                            {"resonance_labeled", resonance_labeled}};
      detail::WriteJson(dir() / artifacts::kIngestReport, counts);
      return counts;
    };
    return p;
  }

  struct Matching {
    FoodDatabase db;
    std::optional<VectorStore> store;
    std::unique_ptr<TextEmbedder> embedder;
    std::unique_ptr<SimilarityIndex> index;
  };

  std::unique_ptr<Matching> LoadMatching() const {
    auto m = std::make_unique<Matching>();
    m->db = FoodDatabase::Load(Rel(artifacts::kFoodDb));
    if (!cfg_.vectors.empty()) {
      m->store = VectorStore::Load(cfg_.vectors);
      m->embedder = std::make_unique<TextEmbedder>(TextEmbedder::Precomputed(*m->store));
    } else {
      m->embedder = std::make_unique<TextEmbedder>(TextEmbedder::Fallback(cfg_.fallback_dim));
    }
    m->index = std::make_unique<SimilarityIndex>(m->db, *m->embedder);
    return m;
  }

  std::vector<PostRecord> ReadPosts() const {
    auto in = detail::OpenInput(dir() / artifacts::kPosts);
    std::vector<PostRecord> out;
    for (auto& r : ReadPostTable(in)) out.push_back(std::move(r.post));
    return out;
  }

  Plan PlanCalibrate() {
    Plan p;
    p.inputs = {{"food_db", Rel(artifacts::kFoodDb)}, {"posts", Rel(artifacts::kPosts)}};
    for (auto& v : VectorInputs()) p.inputs.push_back(v);
    p.settings = Settings({"embedding.fallback_dim", "calibration.sample_size",
                           "calibration.quantile", "calibration.rounding"});
    p.outputs = {std::string(artifacts::kCalibration)};
    p.body = [this] {
      const auto matching = LoadMatching();
      std::vector<std::string> titles;
      for (const auto& post : ReadPosts()) titles.push_back(post.title_clean);
      CalibrationConfig cal;
      cal.sample_size = cfg_.sample_size;
      cal.per_post_quantile = cfg_.quantile;
      cal.rounding_precision = cfg_.rounding;
      cal.rng_seed = StageSeed(Stage::kCalibrate);
      const CalibrationReport report = CalibrateThreshold(titles, *matching->index, cal);
      nlohmann::json j{{"threshold", report.threshold},
                       {"median_quantile", report.median_quantile},
                       {"quantile", cfg_.quantile},
                       {"sample_size_used", report.sample_size_used},
                       {"missing_titles", report.missing_titles.size()},
                       {"per_post_quantiles", report.per_post_quantiles}};
      detail::WriteJson(dir() / artifacts::kCalibration, j);
      return nlohmann::json{{"threshold", report.threshold},
                            {"median_quantile", report.median_quantile},
                            {"sample_size_used", report.sample_size_used}};
    };
    return p;
  }

  Plan PlanEstimate() {
    Plan p;
    p.inputs = {{"food_db", Rel(artifacts::kFoodDb)},
                {"posts", Rel(artifacts::kPosts)},
                {"calibration", Rel(artifacts::kCalibration)}};
    for (auto& v : VectorInputs()) p.inputs.push_back(v);
    p.settings = Settings({"embedding.fallback_dim", "estimate.low", "estimate.high",
                           "estimate.threshold"});
    p.outputs = {std::string(artifacts::kEstimates), std::string(artifacts::kEstimateReport)};
    p.body = [this] {
      const auto matching = LoadMatching();
      const double threshold = cfg_.FixedThreshold().value_or(
          detail::ReadJson(dir() / artifacts::kCalibration).at("threshold").get<double>());
      std::vector<TitledPost> titled;
      for (const auto& post : ReadPosts()) titled.push_back({post.id, post.title_clean});
      const CorpusEstimates est = EstimateCorpus(titled, *matching->index, threshold);
      std::vector<EstimateRow> rows;
      std::vector<double> kcal;
      for (const auto& [id, e] : est.estimates) {
        rows.push_back({id, e, e.matches.size()});
        kcal.push_back(e.kcal);
      }
      const OutlierFilterResult filtered = FilterOutliers(kcal, cfg_.low_kcal, cfg_.high_kcal);
      std::vector<EstimateRow> retained;
      for (std::size_t i : filtered.retained) retained.push_back(rows[i]);
      std::ostringstream table;
      WriteEstimatesCsv(table, retained);
      detail::WriteFile(dir() / artifacts::kEstimates, table.str());
      nlohmann::json counts{{"threshold", threshold},
                            {"posts", titled.size()},
                            {"matched", est.estimates.size()},
                            {"no_match", est.no_match.size()},
                            {"missing_vector", est.missing_vector.size()},
                            {"unique_titles", est.unique_titles},
                            {"unique_titles_matched", est.unique_titles_matched},
                            {"below", filtered.below},
                            {"above", filtered.above},
                            {"with_estimates", retained.size()}};
      detail::WriteJson(dir() / artifacts::kEstimateReport, counts);
      return counts;
    };
    return p;
  }

  Plan PlanFeaturize() {
    Plan p;
    p.inputs = {{"posts", Rel(artifacts::kPosts)}, {"estimates", Rel(artifacts::kEstimates)}};
    p.settings = Settings({"corpus.covid_during", "corpus.covid_post",
                           "corpus.experienced_fraction", "corpus.resonant_quantile",
                           "experiment.tasks", "experiment.test_fraction"});
    p.outputs = {std::string(artifacts::kDatasetReport)};
    for (Task t : cfg_.TaskList()) p.outputs.push_back(artifacts::Features(t));
    p.body = [this] {
      const ModelingSet m = LoadModelingSet(dir());
      if (m.posts.empty()) throw Error(ErrorCode::kEmptySample, "no post kept a nutrition estimate");
      const ExperiencedUsers experienced =
          ExperiencedUserSet(m.all_posts, cfg_.experienced_fraction);
      const CovidBounds bounds = cfg_.Covid();
      const DescriptorLexicon& lexicon = DescriptorLexicon::Default();
      std::vector<FullFeatureRow> rows;
      rows.reserve(m.posts.size());
      std::size_t with_comments = 0;
      for (std::size_t i = 0; i < m.posts.size(); ++i) {
        const auto& post = m.posts[i];
        with_comments += post.num_comments >= 1 ? 1 : 0;
        rows.push_back(BuildFeatureRow(m.nutrition[i], MatchDescriptors(post.title_clean, lexicon),
                                       {}, DeriveControls(post, experienced, bounds)));
      }
      const std::int64_t threshold = ResonanceThreshold(m.posts, cfg_.resonant_quantile);
      std::size_t resonant = 0;
      for (const auto& post : m.posts) resonant += post.num_comments >= threshold ? 1 : 0;
      nlohmann::json counts{{"with_estimates", m.posts.size()},
                            {"with_comments", with_comments},
                            {"resonance_threshold", threshold},
                            {"resonant", resonant},
                            {"experienced_users", experienced.authors.size()},
                            {"experienced_min_posts", experienced.min_posts}};
      const std::uint64_t seed = StageSeed(Stage::kFeaturize);
      for (Task task : cfg_.TaskList()) {
        std::vector<std::size_t> members;
        std::vector<std::uint8_t> y;
        if (task == Task::kEngagement) {
          for (std::size_t i = 0; i < m.posts.size(); ++i) {
            members.push_back(i);
            y.push_back(m.posts[i].num_comments >= 1 ? 1 : 0);
          }
        } else {
          const LabelResult labels =
              BuildLabels(m.posts, cfg_.resonant_quantile, DeriveSeed(seed, "labels"));
          for (std::size_t i : labels.resonance_subset) {
            members.push_back(i);
            y.push_back(*labels.labels[i].resonance ? 1 : 0);
          }
        }
        const Fold split =
            StratifiedSplit(y, cfg_.test_fraction, DeriveSeed(seed, TaskName(task)));
        TaskTable table;
        table.is_test.assign(members.size(), 0);
        for (std::size_t k : split.validation) table.is_test[k] = 1;
        for (std::size_t k = 0; k < members.size(); ++k) {
          table.ids.push_back(m.posts[members[k]].id);
          table.titles.push_back(m.posts[members[k]].title_clean);
          table.labels.push_back(y[k]);
          table.rows.push_back(rows[members[k]]);
        }
        std::ostringstream out;
        WriteTaskTable(out, table);
        detail::WriteFile(dir() / artifacts::Features(task), out.str());
        std::size_t positives = 0;
        for (auto v : y) positives += v;
        counts[std::string(TaskName(task))] = {{"rows", members.size()},
                                               {"positives", positives},
                                               {"train", split.train.size()},
                                               {"test", split.validation.size()}};
      }
      detail::WriteJson(dir() / artifacts::kDatasetReport, counts);
      return counts;
    };
    return p;
  }

  TaskTable ReadTask(Task task, bool with_discriminators) const {
    auto in = detail::OpenInput(dir() / artifacts::Features(task));
    TaskTable table = ReadTaskTable(in);
    if (with_discriminators) {
      ApplyDiscriminators(table, LoadDiscriminators(dir() / artifacts::Discriminators(task)));
    }
    return table;
  }

  Plan PlanMine() {
    Plan p;
    for (Task t : cfg_.TaskList()) {
      p.inputs.emplace_back(artifacts::Features(t), Rel(artifacts::Features(t)));
      p.outputs.push_back(artifacts::Discriminators(t));
    }
    p.settings = Settings({"discriminators.cutoff", "discriminators.alpha",
                           "discriminators.top_words"});
    p.body = [this] {
      nlohmann::json counts = nlohmann::json::object();
      for (Task task : cfg_.TaskList()) {
        const TaskTable table = ReadTask(task, false);
        std::vector<std::string> pos, neg;
        for (std::size_t i : table.Indices(false)) {
          (table.labels[i] ? pos : neg).push_back(table.titles[i]);
        }
        DiscriminatorConfig dc;
        dc.cutoff = cfg_.cutoff;
        dc.alpha = cfg_.alpha;
        dc.top_words = cfg_.top_words;
        const DiscriminatorSet set = MineDiscriminators(pos, neg, dc);
        SaveDiscriminators(dir() / artifacts::Discriminators(task), set);
        counts[std::string(TaskName(task))] = {{"positive", set.positive.size()},
                                               {"negative", set.negative.size()}};
      }
      return counts;
    };
    return p;
  }

  std::vector<std::pair<std::string, std::string>> TaskInputs(bool tuning) const {
    std::vector<std::pair<std::string, std::string>> inputs;
    for (Task t : cfg_.TaskList()) {
      inputs.emplace_back(artifacts::Features(t), Rel(artifacts::Features(t)));
      inputs.emplace_back(artifacts::Discriminators(t), Rel(artifacts::Discriminators(t)));
      if (tuning) inputs.emplace_back(artifacts::Tuning(t), Rel(artifacts::Tuning(t)));
    }
    return inputs;
  }

  Plan PlanTune() {
    Plan p;
    p.inputs = TaskInputs(false);
    for (Task t : cfg_.TaskList()) p.outputs.push_back(artifacts::Tuning(t));
    p.settings = Settings({"experiment.feature_sets", "tuning.enabled", "tuning.estimators",
                           "tuning.depth", "tuning.learning_rate", "tuning.n_random",
                           "tuning.folds", "tuning.refine_points", "model.n_estimators",
                           "model.max_depth", "model.learning_rate", "model.lambda",
                           "model.min_child_weight"});
    p.body = [this] {
      nlohmann::json counts = nlohmann::json::object();
      // Tuned once per task on the widest configured feature set.
      const FeatureSet widest = cfg_.FeatureSets().back();
      for (Task task : cfg_.TaskList()) {
        nlohmann::json j{{"feature_set", widest.Label()}};
        if (cfg_.tune) {
          const TaskTable table = ReadTask(task, true);
          const Dataset train = TaskDataset(table, table.Indices(false), widest);
          TuningOptions opts;
          opts.n_random = cfg_.n_random;
          opts.folds = cfg_.folds;
          opts.refine_points = cfg_.refine_points;
          opts.seed = DeriveSeed(StageSeed(Stage::kTune), TaskName(task));
          TuningGrid grid = cfg_.Grid();
          TuningResult tuned = TuneHyperparameters(train, grid, opts);
          GbtConfig best = tuned.best;
          best.lambda = cfg_.lambda;
          best.min_child_weight = cfg_.min_child_weight;
          nlohmann::json trials = nlohmann::json::array();
          for (const auto& t : tuned.trials) {
            trials.push_back({{"n_estimators", t.config.n_estimators},
                              {"max_depth", t.config.max_depth},
                              {"learning_rate", t.config.learning_rate},
                              {"mean_auc", t.mean_auc},
                              {"phase", t.phase}});
          }
          j["tuned"] = true;
          j["best"] = detail::GbtConfigToJson(best);
          j["best_auc"] = tuned.best_auc;
          j["trials"] = trials;
        } else {
          j["tuned"] = false;
          j["best"] = detail::GbtConfigToJson(cfg_.FixedModel());
        }
        detail::WriteJson(dir() / artifacts::Tuning(task), j);
        counts[std::string(TaskName(task))] = j["best"];
      }
      return counts;
    };
    return p;
  }

  Plan PlanTrain() {
    Plan p;
    p.inputs = TaskInputs(true);
    p.settings = Settings({"experiment.feature_sets"});
    for (Task t : cfg_.TaskList()) {
      for (const FeatureSet& fs : cfg_.FeatureSets()) p.outputs.push_back(artifacts::Model(t, fs));
    }
    p.body = [this] {
      nlohmann::json counts = nlohmann::json::object();
      for (Task task : cfg_.TaskList()) {
        const TaskTable table = ReadTask(task, true);
        const auto train_rows = table.Indices(false);
        GbtConfig config = detail::GbtConfigFromJson(
            detail::ReadJson(dir() / artifacts::Tuning(task)).at("best"));
        for (const FeatureSet& fs : cfg_.FeatureSets()) {
          config.seed = DeriveSeed(StageSeed(Stage::kTrain),
                                   std::string(TaskName(task)) + "/" + fs.Label());
          const TrainedModel model = TrainGbt(TaskDataset(table, train_rows, fs), config);
          const auto path = dir() / artifacts::Model(task, fs);
          std::filesystem::create_directories(path.parent_path());
          SaveModel(path, model);
          counts[std::string(TaskName(task))][fs.Label()] = {
              {"trees", model.trees.size()}, {"training_loss", model.training_loss.back()}};
        }
      }
      return counts;
    };
    return p;
  }

  std::vector<std::pair<std::string, std::string>> ModelInputs() const {
    auto inputs = TaskInputs(false);
    for (Task t : cfg_.TaskList()) {
      for (const FeatureSet& fs : cfg_.FeatureSets()) {
        inputs.emplace_back(artifacts::Model(t, fs), Rel(artifacts::Model(t, fs)));
      }
    }
    return inputs;
  }

  Plan PlanEvaluate() {
    Plan p;
    p.inputs = ModelInputs();
    p.settings = Settings({"experiment.feature_sets", "evaluation.n_bootstrap",
                           "evaluation.level"});
    for (Task t : cfg_.TaskList()) p.outputs.push_back(artifacts::Results(t));
    p.body = [this] {
      nlohmann::json counts = nlohmann::json::object();
      for (Task task : cfg_.TaskList()) {
        const TaskTable table = ReadTask(task, true);
        const auto test_rows = table.Indices(true);
        std::vector<ResultRow> rows;
        for (const FeatureSet& fs : cfg_.FeatureSets()) {
          const TrainedModel model = LoadModel(dir() / artifacts::Model(task, fs));
          const Dataset test = TaskDataset(table, test_rows, fs);
          const std::vector<double> margins = PredictMargins(model, test);
          const double auc = RocAuc(margins, test.y);
          const BootstrapResult boot =
              BootstrapAuc(margins, test.y, cfg_.n_bootstrap, cfg_.level,
                           DeriveSeed(StageSeed(Stage::kEvaluate),
                                      std::string(TaskName(task)) + "/" + fs.Label()));
          rows.push_back({fs.Label(), auc, boot.interval.low, boot.interval.high});
          counts[std::string(TaskName(task))][fs.Label()] = {{"auc", auc},
                                                             {"redraws", boot.redraws}};
        }
        std::ostringstream out;
        WriteResultsCsv(out, rows);
        detail::WriteFile(dir() / artifacts::Results(task), out.str());
      }
      return counts;
    };
    return p;
  }

  Plan PlanExplain() {
    Plan p;
    p.settings = Settings({"explain.enabled", "explain.feature_sets", "explain.mode",
                           "explain.instances", "explain.max_instances",
                           "explain.background_size", "explain.permutations"});
    if (!cfg_.explain) {
      p.body = [] { return nlohmann::json::object(); };
      return p;
    }
    p.inputs = ModelInputs();
    for (Task t : cfg_.TaskList()) {
      for (const FeatureSet& fs : cfg_.ExplainSets()) {
        for (const char* f : {"importance.csv", "beeswarm.csv", "waterfall.csv"}) {
          p.outputs.push_back(artifacts::ExplainFile(t, fs, f));
        }
      }
    }
    p.body = [this] {
      nlohmann::json counts = nlohmann::json::object();
      const std::uint64_t seed = StageSeed(Stage::kExplain);
      for (Task task : cfg_.TaskList()) {
        const TaskTable table = ReadTask(task, true);
        const auto train_rows = table.Indices(false);
        auto test_rows = table.Indices(true);
        const std::string tname(TaskName(task));
        const std::vector<std::string> wanted = cfg_.InstanceIds();
        if (!wanted.empty()) {
          std::map<std::string, std::size_t> row_of;
          for (std::size_t i = 0; i < table.size(); ++i) row_of.emplace(table.ids[i], i);
          test_rows.clear();
          for (const auto& id : wanted) {
            const auto it = row_of.find(id);
            if (it != row_of.end()) test_rows.push_back(it->second);
          }
          if (test_rows.empty()) {
            throw Error(ErrorCode::kConfig, "none of explain.instances is in the " + tname + " table");
          }
        } else if (test_rows.size() > cfg_.max_instances) {
          Rng rng(DeriveSeed(seed, tname + "/instances"));
          std::vector<std::size_t> pick =
              rng.SampleWithoutReplacement(test_rows.size(), cfg_.max_instances);
          std::sort(pick.begin(), pick.end());
          std::vector<std::size_t> chosen;
          for (std::size_t k : pick) chosen.push_back(test_rows[k]);
          test_rows = std::move(chosen);
        }
        for (const FeatureSet& fs : cfg_.ExplainSets()) {
          const TrainedModel model = LoadModel(dir() / artifacts::Model(task, fs));
          const Dataset train = TaskDataset(table, train_rows, fs);
          const Dataset instances = TaskDataset(table, test_rows, fs);
          const std::string key = tname + "/" + fs.Label();
          const Matrix background =
              SampleBackground(train.x, std::min(cfg_.background_size, train.size()),
                               DeriveSeed(seed, key + "/background"));
          ExplainOptions opts;
          const std::string mode = AsciiLower(Trim(cfg_.explain_mode));
          opts.auto_mode = mode == "auto";
          opts.mode = mode == "sample" ? ExplainMode::kSampled : ExplainMode::kExact;
          opts.n_permutations = cfg_.permutations;
          opts.seed = DeriveSeed(seed, key);
          const std::vector<Explanation> ex = ExplainRows(model, instances, background, opts);
          if (ex.empty()) throw Error(ErrorCode::kEmptySample, "no test rows to explain");
          std::ostringstream imp, bee, wf;
          WriteImportanceCsv(imp, ComputeGlobalImportance(ex));
          WriteBeeswarmCsv(bee, ex);
          WriteWaterfallCsv(wf, ex.front());
          detail::WriteFile(dir() / artifacts::ExplainFile(task, fs, "importance.csv"), imp.str());
          detail::WriteFile(dir() / artifacts::ExplainFile(task, fs, "beeswarm.csv"), bee.str());
          detail::WriteFile(dir() / artifacts::ExplainFile(task, fs, "waterfall.csv"), wf.str());
          counts[tname][fs.Label()] = {{"instances", ex.size()},
                                       {"mode", ExplainModeName(ex.front().mode)},
                                       {"waterfall_instance", ex.front().instance_id}};
        }
      }
      return counts;
    };
    return p;
  }

  Plan PlanReport() {
    Plan p;
    p.inputs = {{"ingest_report", Rel(artifacts::kIngestReport)},
                {"posts", Rel(artifacts::kPosts)},
                {"calibration", Rel(artifacts::kCalibration)},
                {"estimates", Rel(artifacts::kEstimates)},
                {"estimate_report", Rel(artifacts::kEstimateReport)},
                {"dataset_report", Rel(artifacts::kDatasetReport)}};
    for (Task t : cfg_.TaskList()) {
      p.inputs.emplace_back(artifacts::Features(t), Rel(artifacts::Features(t)));
      p.inputs.emplace_back(artifacts::Tuning(t), Rel(artifacts::Tuning(t)));
      p.inputs.emplace_back(artifacts::Results(t), Rel(artifacts::Results(t)));
      if (cfg_.explain) {
        for (const FeatureSet& fs : cfg_.ExplainSets()) {
          const auto f = artifacts::ExplainFile(t, fs, "importance.csv");
          p.inputs.emplace_back(f, Rel(f));
        }
      }
    }
    p.settings = Settings({"experiment.tasks", "experiment.feature_sets", "explain.enabled",
                           "explain.feature_sets", "estimate.low", "estimate.high"});
    const std::string r(artifacts::kReportDir);
    p.outputs = {r + "/report.txt", r + "/funnel.csv", r + "/stats.csv", r + "/auc_matrix.csv"};
    for (std::string_view n : kNutrients) p.outputs.push_back(r + "/hist_" + std::string(n) + ".csv");
    p.body = [this] {
      WriteReport(dir(), cfg_);
      return nlohmann::json::object();
    };
    return p;
  }

  PipelineConfig cfg_;
  nlohmann::json manifest_;
};

inline RunResult RunPipeline(const PipelineConfig& config, Stage until = Stage::kReport) {
  Pipeline pipeline(config);
  return pipeline.Run(until);
}

}  // namespace nutripipe
