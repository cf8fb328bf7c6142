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

#include "nutripipe/gbt.hpp"

namespace nutripipe::testing {

// Independent tree walk.
inline double WalkTree(const Tree& t, int node, const std::vector<double>& x) {
  const TreeNode& n = t.nodes[static_cast<std::size_t>(node)];
  if (n.feature < 0) return n.value;
  return WalkTree(t, x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right, x);
}

inline double OracleMargin(const TrainedModel& m, const std::vector<double>& x) {
  double s = 0;
  for (const Tree& t : m.trees) s += WalkTree(t, 0, x);
  return m.base_margin + m.config.learning_rate * s;
}

inline double Factorial(int n) {
  double f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// Shapley values over all d features by direct subset enumeration.
inline std::vector<double> OracleShapley(const TrainedModel& m, const std::vector<double>& x,
                                         const Matrix& background) {
  const int d = static_cast<int>(x.size());
  const auto v = [&](unsigned mask) {
    double s = 0;
    for (std::size_t b = 0; b < background.rows; ++b) {
      std::vector<double> z(background.Row(b).begin(), background.Row(b).end());
      for (int j = 0; j < d; ++j) {
        if (mask & (1u << j)) z[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
      }
      s += OracleMargin(m, z);
    }
    return s / static_cast<double>(background.rows);
  };
  std::vector<double> values(1u << d);
  for (unsigned mask = 0; mask < (1u << d); ++mask) values[mask] = v(mask);
  std::vector<double> phi(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) {
    for (unsigned mask = 0; mask < (1u << d); ++mask) {
      if (mask & (1u << i)) continue;
      const int s = __builtin_popcount(mask);
      const double w = Factorial(s) * Factorial(d - s - 1) / Factorial(d);
      phi[static_cast<std::size_t>(i)] += w * (values[mask | (1u << i)] - values[mask]);
    }
  }
  return phi;
}

}  // namespace nutripipe::testing
