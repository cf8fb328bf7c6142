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

#include <vector>

#include "nutripipe/features.hpp"
#include "nutripipe/gbt.hpp"
#include "nutripipe/random.hpp"

namespace nutripipe::testing {

// Dataset over the controls-only layout (12 columns), filled from a
// generator so model code can be exercised without featurization.
template <typename Fill>
Dataset MakeDataset(std::size_t n, Fill&& fill) {
  Dataset d;
  d.feature_set = FeatureSet{};
  d.feature_names = d.feature_set.Names();
  d.x = Matrix(n, d.feature_names.size());
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.y[i] = fill(i, d.x.Row(i)) ? 1 : 0;
    d.ids.push_back("r" + std::to_string(i));
  }
  return d;
}

// Linear task: y = 1 when 2 x0 - x1 + 0.5 x2 > 0 (plus optional label noise).
inline Dataset LinearTask(std::size_t n, std::uint64_t seed, double noise = 0.0) {
  Rng rng(seed);
  return MakeDataset(n, [&](std::size_t, std::span<double> row) {
    for (double& v : row) v = rng.Normal();
    bool y = 2 * row[0] - row[1] + 0.5 * row[2] > 0;
    if (noise > 0 && rng.Bernoulli(noise)) y = !y;
    return y;
  });
}

}  // namespace nutripipe::testing

namespace nutripipe::testing {

// Random tree ensemble over `width` features; splits only use features in
// `usable`, thresholds on a 0.5 grid so binary and small-integer inputs
// both hit both branches.
inline TrainedModel RandomTreeModel(std::size_t width, const std::vector<int>& usable,
                                    int n_trees, int max_depth, Rng& rng) {
  TrainedModel m;
  for (std::size_t j = 0; j < width; ++j) m.feature_names.push_back("f" + std::to_string(j));
  m.base_margin = rng.Uniform(-1, 1);
  m.config.learning_rate = 0.3;
  m.config.max_depth = max_depth;
  m.config.n_estimators = n_trees;
  for (int t = 0; t < n_trees; ++t) {
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<std::pair<int, int>> frontier{{0, 0}};
    while (!frontier.empty()) {
      auto [node, depth] = frontier.back();
      frontier.pop_back();
      if (depth >= max_depth || (depth > 0 && rng.Bernoulli(0.3))) {
        tree.nodes[node].value = rng.Uniform(-2, 2);
        continue;
      }
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      tree.nodes[node].feature = usable[rng.Index(usable.size())];
      tree.nodes[node].threshold = 0.5 + static_cast<double>(rng.Index(3));
      tree.nodes[node].left = l;
      tree.nodes[node].right = l + 1;
      frontier.push_back({l, depth + 1});
      frontier.push_back({l + 1, depth + 1});
    }
    m.trees.push_back(std::move(tree));
  }
  return m;
}

inline Matrix RandomIntegerRows(std::size_t rows, std::size_t width, Rng& rng) {
  Matrix m(rows, width);
  for (double& v : m.data) v = static_cast<double>(rng.Index(4));
  return m;
}

}  // namespace nutripipe::testing
