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
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "nutripipe/error.hpp"
#include "nutripipe/features.hpp"
#include "nutripipe/gbt.hpp"
#include "nutripipe/hash.hpp"
#include "nutripipe/metrics.hpp"
#include "nutripipe/parallel.hpp"
#include "nutripipe/random.hpp"

namespace nutripipe {

struct Fold {
  std::vector<std::size_t> train;       // ascending
  std::vector<std::size_t> validation;  // ascending
};

// Each class is shuffled with the seed and dealt round-robin; the dealer
// position carries over from one class to the next.
inline std::vector<Fold> StratifiedKFold(std::span<const std::uint8_t> labels, std::size_t k,
                                         std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::kInvalidArgument, "k must be >= 2");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw Error(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c) {
    if (by_class[c].size() < k) {
      throw Error(ErrorCode::kClassTooSmall, "class " + std::to_string(c) + " has " +
                                                 std::to_string(by_class[c].size()) +
                                                 " samples, fewer than k = " + std::to_string(k));
    }
  }
  Rng rng(DeriveSeed(seed, "kfold"));
  std::vector<std::size_t> fold_of(labels.size());
  std::size_t dealer = 0;
  for (int c = 0; c < 2; ++c) {
    rng.Shuffle(by_class[c]);
    for (std::size_t idx : by_class[c]) {
      fold_of[idx] = dealer;
      dealer = (dealer + 1) % k;
    }
  }
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      (f == fold_of[i] ? folds[f].validation : folds[f].train).push_back(i);
    }
  }
  return folds;
}

// Stratified holdout split: per class, a seeded shuffle and the first
// round(test_fraction * class size) go to test.
inline Fold StratifiedSplit(std::span<const std::uint8_t> labels, double test_fraction,
                            std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "test_fraction must lie in (0,1)");
  }
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] ? 1 : 0].push_back(i);
  Rng rng(DeriveSeed(seed, "split"));
  Fold split;
  for (int c = 0; c < 2; ++c) {
    rng.Shuffle(by_class[c]);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(by_class[c].size())));
    for (std::size_t k = 0; k < by_class[c].size(); ++k) {
      (k < n_test ? split.validation : split.train).push_back(by_class[c][k]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

// ---------------------------------------------------------------------------
// Hyperparameter search
// ---------------------------------------------------------------------------

struct TuningGrid {
  std::vector<int> n_estimators{10, 50, 100, 500, 1000};
  std::vector<int> max_depth{1, 2, 3, 4, 10, 15};
  std::vector<double> learning_rate{0.01, 0.1, 0.2, 0.3, 0.4};

  static TuningGrid Full() {
    TuningGrid g;
    g.n_estimators.push_back(50000);
    return g;
  }

  std::size_t size() const {
    return n_estimators.size() * max_depth.size() * learning_rate.size();
  }

  void Validate() const {
    if (n_estimators.empty() || max_depth.empty() || learning_rate.empty()) {
      throw Error(ErrorCode::kConfig, "tuning grid has an empty axis");
    }
    const auto check_sorted = [](const auto& v, const char* name) {
      for (std::size_t i = 1; i < v.size(); ++i) {
        if (!(v[i - 1] < v[i])) {
          throw Error(ErrorCode::kConfig, std::string(name) + " grid must be strictly ascending");
        }
      }
    };
    check_sorted(n_estimators, "n_estimators");
    check_sorted(max_depth, "max_depth");
    check_sorted(learning_rate, "learning_rate");
  }
};

struct TuningOptions {
  std::size_t n_random = 20;
  std::size_t folds = 5;
  std::size_t refine_points = 10;
  std::uint64_t seed = 0;
};

struct TuningTrial {
  GbtConfig config;
  double mean_auc = 0.0;
  int phase = 1;
};

struct TuningResult {
  GbtConfig best;
  double best_auc = 0.0;
  std::vector<TuningTrial> trials;  // evaluation order
};

// Better score wins; ties prefer fewer estimators, then smaller depth, then
// smaller learning rate.
inline bool TrialBetter(const TuningTrial& a, const TuningTrial& b) {
  if (a.mean_auc != b.mean_auc) return a.mean_auc > b.mean_auc;
  return std::tuple(a.config.n_estimators, a.config.max_depth, a.config.learning_rate) <
         std::tuple(b.config.n_estimators, b.config.max_depth, b.config.learning_rate);
}

namespace detail {

// Cross-validated AUC for any number of estimators along one (depth, lr)
// boosting path. Models with fewer trees are prefixes of longer ones, so a
// path is trained once and scored at every requested length.
class CvPaths {
 public:
  CvPaths(const Dataset& data, std::size_t k, std::uint64_t seed) {
    const auto folds = StratifiedKFold(data.y, k, seed);
    for (const Fold& f : folds) {
      auto fd = std::make_unique<FoldData>();
      fd->train = data.Subset(f.train);
      fd->validation = data.Subset(f.validation);
      fd->sorted = std::make_unique<PresortedMatrix>(fd->train);
      folds_.push_back(std::move(fd));
    }
  }

  // Mean validation AUC for every config; configs sharing (depth, lr) reuse
  // one path per fold.
  std::vector<double> Score(const std::vector<GbtConfig>& configs) {
    std::map<std::pair<int, double>, std::set<int>> wanted;
    for (const auto& c : configs) wanted[{c.max_depth, c.learning_rate}].insert(c.n_estimators);
    struct Job {
      Path* path;
      std::size_t fold;
      std::vector<int> lengths;
    };
    std::vector<Job> jobs;
    for (const auto& [key, lengths] : wanted) {
      Path& path = paths_[key];
      if (path.fold_states.empty()) {
        GbtConfig cfg;
        cfg.max_depth = key.first;
        cfg.learning_rate = key.second;
        cfg.n_estimators = 1;
        for (auto& fd : folds_) {
          auto st = std::make_unique<FoldState>();
          st->trainer = std::make_unique<GbtTrainer>(*fd->sorted, cfg);
          st->val_sum.assign(fd->validation.size(), 0.0);
          path.fold_states.push_back(std::move(st));
        }
      }
      std::vector<int> missing;
      for (int len : lengths) {
        if (!path.auc.contains(len)) missing.push_back(len);
      }
      if (missing.empty()) continue;
      for (std::size_t f = 0; f < folds_.size(); ++f) jobs.push_back({&path, f, missing});
    }
    std::vector<std::vector<double>> job_aucs(jobs.size());
    ParallelFor(jobs.size(), [&](std::size_t j) {
      Job& job = jobs[j];
      FoldState& st = *job.path->fold_states[job.fold];
      const Dataset& val = folds_[job.fold]->validation;
      for (int len : job.lengths) {
        if (static_cast<std::size_t>(len) < st.trainer->rounds()) {
          std::vector<double> prefix(val.size());
          for (std::size_t i = 0; i < val.size(); ++i) {
            prefix[i] = st.trainer->model().Margin(val.x.Row(i), static_cast<std::size_t>(len));
          }
          job_aucs[j].push_back(RocAuc(prefix, val.y));
          continue;
        }
        while (st.trainer->rounds() < static_cast<std::size_t>(len)) {
          const Tree& tree = st.trainer->Step();
          for (std::size_t i = 0; i < val.size(); ++i) st.val_sum[i] += tree.Predict(val.x.Row(i));
        }
        // Same expression as TrainedModel::Margin, so scores match a refit.
        const TrainedModel& m = st.trainer->model();
        std::vector<double> margin(val.size());
        for (std::size_t i = 0; i < val.size(); ++i) {
          margin[i] = m.base_margin + m.config.learning_rate * st.val_sum[i];
        }
        job_aucs[j].push_back(RocAuc(margin, val.y));
      }
    });
    // Deterministic reduction in job order.
    std::map<std::pair<Path*, int>, double> sums;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      for (std::size_t t = 0; t < jobs[j].lengths.size(); ++t) {
        sums[{jobs[j].path, jobs[j].lengths[t]}] += job_aucs[j][t];
      }
    }
    for (const auto& [key, sum] : sums) {
      key.first->auc[key.second] = sum / static_cast<double>(folds_.size());
    }
    std::vector<double> out;
    for (const auto& c : configs) {
      out.push_back(paths_.at({c.max_depth, c.learning_rate}).auc.at(c.n_estimators));
    }
    return out;
  }

 private:
  struct FoldData {
    Dataset train;
    Dataset validation;
    std::unique_ptr<PresortedMatrix> sorted;
  };
  struct FoldState {
    std::unique_ptr<GbtTrainer> trainer;
    std::vector<double> val_sum;  // raw tree outputs summed over rounds
  };
  struct Path {
    std::vector<std::unique_ptr<FoldState>> fold_states;
    std::map<int, double> auc;
  };

  std::vector<std::unique_ptr<FoldData>> folds_;
  std::map<std::pair<int, double>, Path> paths_;
};

}  // namespace detail

// Phase 1 scores n_random configs drawn without replacement from the grid.
// Phase 2 scores the +-1 step neighbourhood of the phase 1 winner on every
// axis, plus refine_points evenly spaced estimator counts between the grid
// values that bracket the winner's count.
inline TuningResult TuneHyperparameters(const Dataset& train, const TuningGrid& grid,
                                        const TuningOptions& options = {}) {
  grid.Validate();
  const std::size_t ne = grid.n_estimators.size(), nd = grid.max_depth.size(),
                    nl = grid.learning_rate.size();
  const auto config_at = [&](std::size_t i, std::size_t j, std::size_t k) {
    GbtConfig c;
    c.n_estimators = grid.n_estimators[i];
    c.max_depth = grid.max_depth[j];
    c.learning_rate = grid.learning_rate[k];
    c.seed = options.seed;
    return c;
  };
  detail::CvPaths paths(train, options.folds, options.seed);
  TuningResult result;
  std::set<std::tuple<int, int, double>> seen;
  const auto evaluate = [&](const std::vector<GbtConfig>& batch, int phase) {
    std::vector<GbtConfig> fresh;
    for (const auto& c : batch) {
      if (seen.insert({c.n_estimators, c.max_depth, c.learning_rate}).second) fresh.push_back(c);
    }
    const std::vector<double> scores = paths.Score(fresh);
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      result.trials.push_back({fresh[i], scores[i], phase});
    }
  };

  Rng rng(DeriveSeed(options.seed, "tune"));
  std::vector<GbtConfig> phase1;
  for (std::size_t flat : rng.SampleWithoutReplacement(grid.size(), options.n_random)) {
    phase1.push_back(config_at(flat / (nd * nl), flat / nl % nd, flat % nl));
  }
  evaluate(phase1, 1);
  const auto best_of = [&] {
    return *std::min_element(result.trials.begin(), result.trials.end(), TrialBetter);
  };
  const TuningTrial winner = best_of();
  const auto index_of = [](const auto& axis, auto value) {
    return static_cast<std::size_t>(std::find(axis.begin(), axis.end(), value) - axis.begin());
  };
  const std::size_t wi = index_of(grid.n_estimators, winner.config.n_estimators);
  const std::size_t wj = index_of(grid.max_depth, winner.config.max_depth);
  const std::size_t wk = index_of(grid.learning_rate, winner.config.learning_rate);
  std::vector<GbtConfig> phase2;
  const auto around = [](std::size_t center, std::size_t size) {
    std::vector<std::size_t> out;
    for (std::size_t v = center == 0 ? 0 : center - 1; v <= std::min(center + 1, size - 1); ++v) {
      out.push_back(v);
    }
    return out;
  };
  for (std::size_t i : around(wi, ne)) {
    for (std::size_t j : around(wj, nd)) {
      for (std::size_t k : around(wk, nl)) phase2.push_back(config_at(i, j, k));
    }
  }
  const int lo = grid.n_estimators[wi == 0 ? 0 : wi - 1];
  const int hi = grid.n_estimators[std::min(wi + 1, ne - 1)];
  for (std::size_t t = 0; options.refine_points > 1 && t < options.refine_points; ++t) {
    GbtConfig c = winner.config;
    c.n_estimators = static_cast<int>(std::llround(
        lo + static_cast<double>(hi - lo) * static_cast<double>(t) /
                 static_cast<double>(options.refine_points - 1)));
    c.n_estimators = std::max(1, c.n_estimators);
    phase2.push_back(c);
  }
  evaluate(phase2, 2);
  const TuningTrial best = best_of();
  result.best = best.config;
  result.best_auc = best.mean_auc;
  return result;
}

}  // namespace nutripipe
