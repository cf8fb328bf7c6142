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

#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "nutripipe/corpus.hpp"
#include "nutripipe/cv.hpp"
#include "nutripipe/embeddings.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/features.hpp"
#include "nutripipe/gbt.hpp"
#include "nutripipe/hash.hpp"
#include "nutripipe/strings.hpp"

namespace nutripipe {

enum class Task { kEngagement, kResonance };

inline std::string_view TaskName(Task task) {
  return task == Task::kEngagement ? "engagement" : "resonance";
}

inline Task ParseTask(std::string_view name) {
  const std::string lower = AsciiLower(Trim(name));
  if (lower == "engagement") return Task::kEngagement;
  if (lower == "resonance") return Task::kResonance;
  throw Error(ErrorCode::kConfig, "unknown task '" + std::string(name) + "'");
}

struct PipelineConfig {
  // [paths]
  std::string food_db;
  std::string posts;
  std::string vectors;  // empty: built-in fallback embedder
  std::string out_dir = "nutripipe_run";
  // [embedding]
  std::size_t fallback_dim = kDefaultFallbackDim;
  // [calibration]
  std::size_t sample_size = 5000;
  double quantile = 0.999;
  double rounding = 1.0;
  // [estimate]
  double low_kcal = 32.0;
  double high_kcal = 717.0;
  std::string threshold = "auto";  // or a fixed similarity threshold
  // [corpus]
  std::string covid_during = "2020-03-01";
  std::string covid_post = "2021-07-01";
  double experienced_fraction = 0.05;
  double resonant_quantile = 0.99;
  // [experiment]
  std::vector<std::string> tasks{"engagement", "resonance"};
  std::vector<std::string> feature_sets{"C",     "C+N",   "C+F",   "C+E",
                                        "C+N+F", "C+N+E", "C+F+E", "C+N+F+E"};
  double test_fraction = 0.2;
  // [discriminators]
  double cutoff = 0.01;
  double alpha = 0.05;
  std::size_t top_words = 100;
  // [tuning]
  bool tune = true;
  std::vector<int> grid_estimators = TuningGrid{}.n_estimators;
  std::vector<int> grid_depth = TuningGrid{}.max_depth;
  std::vector<double> grid_learning_rate = TuningGrid{}.learning_rate;
  std::size_t n_random = 20;
  std::size_t folds = 5;
  std::size_t refine_points = 10;
  // [model] used as-is when tuning is off
  int n_estimators = 26;
  int max_depth = 4;
  double learning_rate = 0.3;
  double lambda = 1.0;
  double min_child_weight = 1.0;
  // [evaluation]
  std::size_t n_bootstrap = 1000;
  double level = 0.95;
  // [explain]
  bool explain = true;
  std::vector<std::string> explain_sets{"C+N", "C+N+F+E"};
  std::string explain_mode = "auto";  // auto, exact or sample
  std::string instances = "all";  // or comma-separated post ids
  std::size_t max_instances = 200;
  std::size_t background_size = 100;
  std::size_t permutations = 2000;
  // [seed]
  std::uint64_t seed = 42;

  bool operator==(const PipelineConfig&) const = default;

  std::vector<Task> TaskList() const {
    std::vector<Task> out;
    for (const auto& t : tasks) out.push_back(ParseTask(t));
    return out;
  }

  bool HasTask(Task task) const {
    for (Task t : TaskList()) {
      if (t == task) return true;
    }
    return false;
  }

  // Feature sets in canonical order, restricted to the configured ones.
  std::vector<FeatureSet> FeatureSets() const {
    std::set<std::string> wanted;
    for (const auto& label : feature_sets) wanted.insert(FeatureSet::Parse(label).Label());
    std::vector<FeatureSet> out;
    for (const FeatureSet& fs : FeatureSet::All()) {
      if (wanted.contains(fs.Label())) out.push_back(fs);
    }
    return out;
  }

  std::vector<FeatureSet> ExplainSets() const {
    std::set<std::string> wanted;
    for (const auto& label : explain_sets) wanted.insert(FeatureSet::Parse(label).Label());
    std::vector<FeatureSet> out;
    for (const FeatureSet& fs : FeatureSets()) {
      if (wanted.contains(fs.Label())) out.push_back(fs);
    }
    return out;
  }

  CovidBounds Covid() const {
    CovidBounds b;
    b.during_start = ParseIsoTimestamp(covid_during);
    b.post_start = ParseIsoTimestamp(covid_post);
    return b;
  }

  TuningGrid Grid() const {
    TuningGrid g;
    g.n_estimators = grid_estimators;
    g.max_depth = grid_depth;
    g.learning_rate = grid_learning_rate;
    return g;
  }

  // Fixed threshold, or nullopt when it comes from calibration.
  std::optional<double> FixedThreshold() const {
    const std::string t = AsciiLower(Trim(threshold));
    if (t == "auto" || t.empty()) return std::nullopt;
    double v = 0.0;
    if (!ParseDouble(t, v) || !(v > 0.0 && v < 1.0)) {
      throw Error(ErrorCode::kConfig, "estimate.threshold must be auto or lie in (0,1)");
    }
    return v;
  }

  // Requested explanation ids; empty means every test row, up to max_instances.
  std::vector<std::string> InstanceIds() const {
    if (AsciiLower(Trim(instances)) == "all") return {};
    std::vector<std::string> out;
    for (const std::string& part : Split(instances, ',')) {
      const std::string id(Trim(part));
      if (!id.empty()) out.push_back(id);
    }
    if (out.empty()) throw Error(ErrorCode::kConfig, "explain.instances is empty");
    return out;
  }

  GbtConfig FixedModel() const {
    GbtConfig c;
    c.n_estimators = n_estimators;
    c.max_depth = max_depth;
    c.learning_rate = learning_rate;
    c.lambda = lambda;
    c.min_child_weight = min_child_weight;
    return c;
  }

  void Validate() const {
    const auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfig, msg); };
    if (fallback_dim < kMinFallbackDim) fail("embedding.fallback_dim must be >= 16");
    if (sample_size < 1) fail("calibration.sample_size must be >= 1");
    if (!(quantile > 0.0 && quantile < 1.0)) fail("calibration.quantile must lie in (0,1)");
    if (!(rounding > 0.0)) fail("calibration.rounding must be > 0");
    if (!(low_kcal < high_kcal)) fail("estimate.low must be below estimate.high");
    (void)FixedThreshold();
    const CovidBounds b = Covid();
    if (b.post_start < b.during_start) fail("corpus covid bounds out of order");
    if (!(experienced_fraction > 0.0 && experienced_fraction <= 1.0)) {
      fail("corpus.experienced_fraction must lie in (0,1]");
    }
    if (!(resonant_quantile > 0.0 && resonant_quantile < 1.0)) {
      fail("corpus.resonant_quantile must lie in (0,1)");
    }
    if (tasks.empty()) fail("experiment.tasks is empty");
    std::set<std::string> seen_tasks;
    for (const auto& t : tasks) {
      if (!seen_tasks.insert(std::string(TaskName(ParseTask(t)))).second) fail("repeated task " + t);
    }
    if (feature_sets.empty()) fail("experiment.feature_sets is empty");
    (void)FeatureSets();
    for (const auto& label : explain_sets) {
      const std::string canonical = FeatureSet::Parse(label).Label();
      bool found = false;
      for (const auto& fs : FeatureSets()) found = found || fs.Label() == canonical;
      if (!found) fail("explain set " + label + " is not among experiment.feature_sets");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
      fail("experiment.test_fraction must lie in (0,1)");
    }
    if (!(cutoff >= 0.0 && cutoff <= 1.0)) fail("discriminators.cutoff must lie in [0,1]");
    if (!(alpha > 0.0 && alpha < 1.0)) fail("discriminators.alpha must lie in (0,1)");
    if (top_words < 1) fail("discriminators.top_words must be >= 1");
    Grid().Validate();
    for (int n : grid_estimators) {
      if (n < 1) fail("tuning.estimators values must be >= 1");
    }
    for (int d : grid_depth) {
      if (d < 1) fail("tuning.depth values must be >= 1");
    }
    for (double lr : grid_learning_rate) {
      if (!(lr > 0.0 && lr <= 1.0)) fail("tuning.learning_rate values must lie in (0,1]");
    }
    if (folds < 2) fail("tuning.folds must be >= 2");
    FixedModel().Validate();
    if (n_bootstrap < 1) fail("evaluation.n_bootstrap must be >= 1");
    if (!(level > 0.0 && level < 1.0)) fail("evaluation.level must lie in (0,1)");
    const std::string mode = AsciiLower(Trim(explain_mode));
    if (mode != "auto" && mode != "exact" && mode != "sample") {
      fail("explain.mode must be auto, exact or sample");
    }
    (void)InstanceIds();
    if (max_instances < 1) fail("explain.max_instances must be >= 1");
    if (background_size < 1) fail("explain.background_size must be >= 1");
    if (permutations < 1) fail("explain.permutations must be >= 1");
  }
};

namespace detail {

template <typename T>
std::string JoinList(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, double>) {
      out += FormatDouble(values[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += values[i];
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

// Binds every INI key to a field; used for both directions so the two can
// never drift apart.
template <typename Visitor>
void VisitConfig(PipelineConfig& c, Visitor&& v) {
  v("paths.food_db", c.food_db);
  v("paths.posts", c.posts);
  v("paths.vectors", c.vectors);
  v("paths.out_dir", c.out_dir);
  v("embedding.fallback_dim", c.fallback_dim);
  v("calibration.sample_size", c.sample_size);
  v("calibration.quantile", c.quantile);
  v("calibration.rounding", c.rounding);
  v("estimate.low", c.low_kcal);
  v("estimate.high", c.high_kcal);
  v("estimate.threshold", c.threshold);
  v("corpus.covid_during", c.covid_during);
  v("corpus.covid_post", c.covid_post);
  v("corpus.experienced_fraction", c.experienced_fraction);
  v("corpus.resonant_quantile", c.resonant_quantile);
  v("experiment.tasks", c.tasks);
  v("experiment.feature_sets", c.feature_sets);
  v("experiment.test_fraction", c.test_fraction);
  v("discriminators.cutoff", c.cutoff);
  v("discriminators.alpha", c.alpha);
  v("discriminators.top_words", c.top_words);
  v("tuning.enabled", c.tune);
  v("tuning.estimators", c.grid_estimators);
  v("tuning.depth", c.grid_depth);
  v("tuning.learning_rate", c.grid_learning_rate);
  v("tuning.n_random", c.n_random);
  v("tuning.folds", c.folds);
  v("tuning.refine_points", c.refine_points);
  v("model.n_estimators", c.n_estimators);
  v("model.max_depth", c.max_depth);
  v("model.learning_rate", c.learning_rate);
  v("model.lambda", c.lambda);
  v("model.min_child_weight", c.min_child_weight);
  v("evaluation.n_bootstrap", c.n_bootstrap);
  v("evaluation.level", c.level);
  v("explain.enabled", c.explain);
  v("explain.feature_sets", c.explain_sets);
  v("explain.mode", c.explain_mode);
  v("explain.instances", c.instances);
  v("explain.max_instances", c.max_instances);
  v("explain.background_size", c.background_size);
  v("explain.permutations", c.permutations);
  v("seed.master", c.seed);
}

inline std::string FormatValue(const std::string& v) { return v; }
inline std::string FormatValue(bool v) { return v ? "true" : "false"; }
inline std::string FormatValue(double v) { return FormatDouble(v); }
template <typename T>
std::string FormatValue(const std::vector<T>& v) {
  return JoinList(v);
}
template <typename T>
  requires std::is_integral_v<T>
std::string FormatValue(T v) {
  return std::to_string(v);
}

inline bool ParseValue(std::string_view text, std::string& out) {
  out = std::string(Trim(text));
  return true;
}
inline bool ParseValue(std::string_view text, bool& out) {
  const std::string t = AsciiLower(Trim(text));
  if (t == "true" || t == "1" || t == "yes" || t == "on") {
    out = true;
  } else if (t == "false" || t == "0" || t == "no" || t == "off") {
    out = false;
  } else {
    return false;
  }
  return true;
}
inline bool ParseValue(std::string_view text, double& out) { return ParseDouble(Trim(text), out); }
template <typename T>
  requires std::is_integral_v<T>
bool ParseValue(std::string_view text, T& out) {
  return ParseInt(Trim(text), out);
}
template <typename T>
bool ParseValue(std::string_view text, std::vector<T>& out) {
  out.clear();
  if (Trim(text).empty()) return true;
  for (const std::string& part : Split(text, ',')) {
    T value{};
    if (!ParseValue(part, value)) return false;
    out.push_back(std::move(value));
  }
  return true;
}

}  // namespace detail

inline std::string ConfigToIni(const PipelineConfig& config) {
  PipelineConfig copy = config;
  boost::property_tree::ptree tree;
  detail::VisitConfig(copy, [&](const char* key, auto& field) {
    tree.put(key, detail::FormatValue(field));
  });
  std::ostringstream out;
  boost::property_tree::write_ini(out, tree);
  return out.str();
}

// Unknown sections or keys are errors; missing keys keep their defaults.
inline PipelineConfig ConfigFromIni(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::kConfig, e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  PipelineConfig config;
  std::set<std::string> known;
  detail::VisitConfig(config, [&](const char* key, auto& field) {
    known.insert(key);
    const auto value = tree.get_optional<std::string>(key);
    if (!value) return;
    if (!detail::ParseValue(*value, field)) {
      throw Error(ErrorCode::kConfig, std::string("bad value for ") + key + ": '" + *value + "'");
    }
  });
  for (const auto& [section, children] : tree) {
    if (children.empty()) {
      throw Error(ErrorCode::kConfig, "key outside a section: " + section);
    }
    for (const auto& [key, unused] : children) {
      if (!known.contains(section + "." + key)) {
        throw Error(ErrorCode::kConfig, "unknown config key " + section + "." + key);
      }
    }
  }
  return config;
}

inline PipelineConfig LoadConfig(const std::string& path) {
  std::string text;
  try {
    text = ReadFileBytes(path);
  } catch (const Error&) {
    throw Error(ErrorCode::kConfig, "cannot read config " + path);
  }
  return ConfigFromIni(text);
}

inline void SaveConfig(const std::string& path, const PipelineConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << ConfigToIni(config);
}

}  // namespace nutripipe
