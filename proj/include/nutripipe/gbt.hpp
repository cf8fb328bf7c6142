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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"
#include "nutripipe/error.hpp"
#include "nutripipe/features.hpp"

namespace nutripipe {

struct GbtConfig {
  int n_estimators = 26;
  int max_depth = 4;
  double learning_rate = 0.3;
  std::uint64_t seed = 0;
  double lambda = 1.0;
  double min_child_weight = 1.0;

  void Validate() const {
    if (n_estimators < 1) throw Error(ErrorCode::kConfig, "n_estimators must be >= 1");
    if (max_depth < 1) throw Error(ErrorCode::kConfig, "max_depth must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
      throw Error(ErrorCode::kConfig, "learning_rate must lie in (0,1]");
    }
    if (!(lambda >= 0.0) || !(min_child_weight >= 0.0)) {
      throw Error(ErrorCode::kConfig, "lambda and min_child_weight must be >= 0");
    }
  }

  bool operator==(const GbtConfig&) const = default;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output before the learning rate

  bool is_leaf() const { return feature < 0; }
};

// x[feature] < threshold goes left.
struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double Predict(std::span<const double> x) const {
    int i = 0;
    while (!nodes[i].is_leaf()) {
      const TreeNode& n = nodes[i];
      i = x[n.feature] < n.threshold ? n.left : n.right;
    }
    return nodes[i].value;
  }

  int Depth(int node = 0) const {
    const TreeNode& n = nodes[node];
    if (n.is_leaf()) return 0;
    return 1 + std::max(Depth(n.left), Depth(n.right));
  }

  bool UsesFeature(int feature) const {
    return std::any_of(nodes.begin(), nodes.end(),
                       [&](const TreeNode& n) { return n.feature == feature; });
  }
};

inline double Logistic(double margin) {
  if (margin >= 0) return 1.0 / (1.0 + std::exp(-margin));
  const double e = std::exp(margin);
  return e / (1.0 + e);
}

// log(1 + exp(m)) - y m, stable for large |m|.
inline double LogLoss(double margin, std::uint8_t y) {
  const double softplus = margin > 0 ? margin + std::log1p(std::exp(-margin))
                                     : std::log1p(std::exp(margin));
  return softplus - (y ? margin : 0.0);
}

struct TrainedModel {
  std::vector<Tree> trees;
  double base_margin = 0.0;
  GbtConfig config;
  FeatureSet feature_set;
  std::vector<std::string> feature_names;
  std::vector<double> training_loss;  // mean log loss; [0] is the base margin alone

  std::size_t width() const { return feature_names.size(); }

  double Margin(std::span<const double> x, std::size_t n_trees) const {
    if (x.size() != feature_names.size()) {
      throw Error(ErrorCode::kFeatureMaskMismatch,
                  "instance has " + std::to_string(x.size()) + " features, model expects " +
                      std::to_string(feature_names.size()));
    }
    double sum = 0.0;
    const std::size_t limit = std::min(n_trees, trees.size());
    for (std::size_t t = 0; t < limit; ++t) sum += trees[t].Predict(x);
    return base_margin + config.learning_rate * sum;
  }

  double Margin(std::span<const double> x) const { return Margin(x, trees.size()); }
  double Probability(std::span<const double> x) const { return Logistic(Margin(x)); }
};

inline void CheckModelMatches(const TrainedModel& model, const Dataset& data) {
  if (!(model.feature_set == data.feature_set) || model.feature_names != data.feature_names) {
    throw Error(ErrorCode::kFeatureMaskMismatch, "dataset " + data.feature_set.Label() +
                                                     " does not match model " +
                                                     model.feature_set.Label());
  }
}

inline std::vector<double> PredictMargins(const TrainedModel& model, const Dataset& data) {
  CheckModelMatches(model, data);
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = model.Margin(data.x.Row(i));
  return out;
}

// Per-feature sort order and distinct values of a training matrix. Depends
// only on the data, so it can be shared by trainers with different configs.
struct PresortedMatrix {
  const Dataset* data = nullptr;
  std::vector<std::vector<std::uint32_t>> order;  // rows by ascending value
  std::vector<std::vector<std::uint32_t>> rank;   // dense rank of each row's value
  std::vector<std::vector<double>> distinct;      // ascending distinct values

  explicit PresortedMatrix(const Dataset& train) : data(&train) {
    const std::size_t n = train.size(), d = train.width();
    order.resize(d);
    rank.assign(d, std::vector<std::uint32_t>(n));
    distinct.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      auto& ord = order[j];
      ord.resize(n);
      std::iota(ord.begin(), ord.end(), 0u);
      std::stable_sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
        return train.x.At(a, j) < train.x.At(b, j);
      });
      for (std::size_t k = 0; k < n; ++k) {
        const double v = train.x.At(ord[k], j);
        if (k == 0 || v != distinct[j].back()) distinct[j].push_back(v);
        rank[j][ord[k]] = static_cast<std::uint32_t>(distinct[j].size() - 1);
      }
    }
  }
};

// Boosting state that can be advanced one tree at a time. Exact greedy
// split search over every boundary between adjacent distinct values, one
// tree level at a time.
class GbtTrainer {
 public:
  GbtTrainer(const Dataset& train, const GbtConfig& config)
      : owned_(std::make_shared<PresortedMatrix>(train)), sorted_(*owned_), data_(train) {
    Init(config);
  }

  GbtTrainer(const PresortedMatrix& sorted, const GbtConfig& config)
      : sorted_(sorted), data_(*sorted.data) {
    Init(config);
  }

  const TrainedModel& model() const { return model_; }
  TrainedModel TakeModel() { return std::move(model_); }
  std::size_t rounds() const { return model_.trees.size(); }

  // Fits and appends one tree; returns it.
  const Tree& Step() {
    const std::size_t n = data_.size();
    const std::size_t d = data_.width();
    const GbtConfig& cfg = model_.config;
    std::vector<double> g(n), h(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = Logistic(margin_[i]);
      g[i] = p - static_cast<double>(data_.y[i]);
      h[i] = p * (1.0 - p);
    }
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<int> node_of(n, 0);
    std::vector<int> frontier{0};
    struct Sums {
      double g = 0, h = 0;
    };
    for (int depth = 0; !frontier.empty(); ++depth) {
      const std::size_t node_count = tree.nodes.size();
      std::vector<Sums> total(node_count);
      for (std::size_t i = 0; i < n; ++i) {
        total[node_of[i]].g += g[i];
        total[node_of[i]].h += h[i];
      }
      std::vector<char> active(node_count, 0);
      if (depth < cfg.max_depth) {
        for (int nd : frontier) {
          if (total[nd].h >= 2.0 * cfg.min_child_weight) active[nd] = 1;
        }
      }
      struct Best {
        double gain = 0.0;
        int feature = -1;
        std::uint32_t rank = 0;  // rows with rank <= this go left
      };
      std::vector<Best> best(node_count);
      std::vector<Sums> left(node_count);
      std::vector<std::int64_t> last_rank(node_count);
      bool any_active = std::any_of(active.begin(), active.end(), [](char c) { return c; });
      for (std::size_t j = 0; any_active && j < d; ++j) {
        std::fill(left.begin(), left.end(), Sums{});
        std::fill(last_rank.begin(), last_rank.end(), -1);
        const auto& ranks = sorted_.rank[j];
        for (std::uint32_t i : sorted_.order[j]) {
          const int nd = node_of[i];
          if (!active[nd]) continue;
          const std::int64_t r = ranks[i];
          if (last_rank[nd] >= 0 && r != last_rank[nd]) {
            const Sums& l = left[nd];
            const double gr = total[nd].g - l.g, hr = total[nd].h - l.h;
            if (l.h >= cfg.min_child_weight && hr >= cfg.min_child_weight) {
              const double gain = l.g * l.g / (l.h + cfg.lambda) + gr * gr / (hr + cfg.lambda) -
                                  total[nd].g * total[nd].g / (total[nd].h + cfg.lambda);
              if (gain > best[nd].gain + kMinGain) {
                best[nd] = {gain, static_cast<int>(j), static_cast<std::uint32_t>(last_rank[nd])};
              }
            }
          }
          left[nd].g += g[i];
          left[nd].h += h[i];
          last_rank[nd] = r;
        }
      }
      std::vector<int> next;
      for (int nd : frontier) {
        if (!active[nd] || best[nd].feature < 0) {
          tree.nodes[nd].value = -total[nd].g / (total[nd].h + cfg.lambda);
          continue;
        }
        const auto& values = sorted_.distinct[best[nd].feature];
        const double lo = values[best[nd].rank], hi = values[best[nd].rank + 1];
        double threshold = lo + (hi - lo) / 2.0;
        if (!(threshold > lo)) threshold = hi;
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        TreeNode& node = tree.nodes[nd];
        node.feature = best[nd].feature;
        node.threshold = threshold;
        node.left = l;
        node.right = l + 1;
        next.push_back(l);
        next.push_back(l + 1);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const TreeNode& node = tree.nodes[node_of[i]];
        if (node.is_leaf()) continue;
        node_of[i] = sorted_.rank[node.feature][i] <= best[node_of[i]].rank ? node.left : node.right;
      }
      frontier = std::move(next);
    }
    for (std::size_t i = 0; i < n; ++i) {
      margin_[i] += cfg.learning_rate * tree.nodes[node_of[i]].value;
    }
    model_.trees.push_back(std::move(tree));
    model_.training_loss.push_back(MeanLoss());
    return model_.trees.back();
  }

 private:
  static constexpr double kMinGain = 1e-12;

  void Init(const GbtConfig& config) {
    config.Validate();
    const std::size_t n = data_.size();
    if (n == 0) throw Error(ErrorCode::kInvalidArgument, "empty training set");
    if (data_.y.size() != n) throw Error(ErrorCode::kInvalidArgument, "labels missing");
    const auto positives =
        static_cast<std::size_t>(std::count(data_.y.begin(), data_.y.end(), 1));
    if (positives == 0 || positives == n) {
      throw Error(ErrorCode::kSingleClassInput, "training data contains one class");
    }
    model_.config = config;
    model_.feature_set = data_.feature_set;
    model_.feature_names = data_.feature_names;
    const double prevalence = static_cast<double>(positives) / static_cast<double>(n);
    model_.base_margin = std::log(prevalence / (1.0 - prevalence));
    margin_.assign(n, model_.base_margin);
    model_.training_loss.push_back(MeanLoss());
  }

  double MeanLoss() const {
    double s = 0.0;
    for (std::size_t i = 0; i < margin_.size(); ++i) s += LogLoss(margin_[i], data_.y[i]);
    return s / static_cast<double>(margin_.size());
  }

  std::shared_ptr<PresortedMatrix> owned_;
  const PresortedMatrix& sorted_;
  const Dataset& data_;
  TrainedModel model_;
  std::vector<double> margin_;
};

inline TrainedModel TrainGbt(const Dataset& train, const GbtConfig& config) {
  GbtTrainer trainer(train, config);
  for (int t = 0; t < config.n_estimators; ++t) trainer.Step();
  return trainer.TakeModel();
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json NodeToJson(const Tree& tree, int i) {
  const TreeNode& n = tree.nodes[i];
  if (n.is_leaf()) return {{"leaf", n.value}};
  return {{"feature", n.feature},
          {"threshold", n.threshold},
          {"left", NodeToJson(tree, n.left)},
          {"right", NodeToJson(tree, n.right)}};
}

inline int NodeFromJson(const nlohmann::json& j, Tree& tree, std::size_t width) {
  const int index = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (j.contains("leaf")) {
    tree.nodes[index].value = j.at("leaf").get<double>();
    return index;
  }
  const int feature = j.at("feature").get<int>();
  if (feature < 0 || static_cast<std::size_t>(feature) >= width) {
    throw Error(ErrorCode::kFeatureMaskMismatch, "tree references feature out of range");
  }
  const double threshold = j.at("threshold").get<double>();
  const int l = NodeFromJson(j.at("left"), tree, width);
  const int r = NodeFromJson(j.at("right"), tree, width);
  TreeNode& node = tree.nodes[index];
  node.feature = feature;
  node.threshold = threshold;
  node.left = l;
  node.right = r;
  return index;
}

}  // namespace detail

inline nlohmann::json ModelToJson(const TrainedModel& model) {
  nlohmann::json trees = nlohmann::json::array();
  for (const Tree& t : model.trees) trees.push_back(detail::NodeToJson(t, 0));
  return {{"format", "nutripipe-gbt"},
          {"version", kModelFormatVersion},
          {"config",
           {{"n_estimators", model.config.n_estimators},
            {"max_depth", model.config.max_depth},
            {"learning_rate", model.config.learning_rate},
            {"seed", model.config.seed},
            {"lambda", model.config.lambda},
            {"min_child_weight", model.config.min_child_weight},
            {"loss", "binary_logistic"}}},
          {"feature_set", model.feature_set.Label()},
          {"feature_names", model.feature_names},
          {"base_margin", model.base_margin},
          {"training_loss", model.training_loss},
          {"trees", trees}};
}

inline TrainedModel ModelFromJson(const nlohmann::json& j) {
  TrainedModel m;
  try {
    if (j.at("format").get<std::string>() != "nutripipe-gbt" ||
        j.at("version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorCode::kConfig, "unsupported model format");
    }
    const auto& c = j.at("config");
    m.config.n_estimators = c.at("n_estimators").get<int>();
    m.config.max_depth = c.at("max_depth").get<int>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.lambda = c.at("lambda").get<double>();
    m.config.min_child_weight = c.at("min_child_weight").get<double>();
    m.feature_set = FeatureSet::Parse(j.at("feature_set").get<std::string>());
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    if (m.feature_names != m.feature_set.Names()) {
      throw Error(ErrorCode::kFeatureMaskMismatch, "feature names do not match feature set");
    }
    m.base_margin = j.at("base_margin").get<double>();
    m.training_loss = j.value("training_loss", std::vector<double>{});
    for (const auto& t : j.at("trees")) {
      Tree tree;
      detail::NodeFromJson(t, tree, m.feature_names.size());
      m.trees.push_back(std::move(tree));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMissingRequiredKey, std::string("model json: ") + e.what());
  }
  return m;
}

inline void SaveModel(const std::filesystem::path& path, const TrainedModel& model) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << ModelToJson(model).dump() << '\n';
}

inline TrainedModel LoadModel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("bad model file: ") + e.what());
  }
  return ModelFromJson(j);
}

}  // namespace nutripipe
