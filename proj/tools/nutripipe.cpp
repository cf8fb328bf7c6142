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


#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nutripipe/config.hpp"
#include "nutripipe/pipeline.hpp"
#include "nutripipe/synthetic.hpp"

namespace {

using nutripipe::Error;
using nutripipe::ErrorCode;
using nutripipe::PipelineConfig;
using nutripipe::Stage;

struct Overrides {
  std::string config;
  std::optional<std::string> out_dir, food_db, posts, vectors, covid_bounds, threshold;
  std::optional<std::size_t> fallback_dim, sample_size, n_bootstrap, background_size;
  std::optional<std::size_t> permutations, max_instances;
  std::optional<double> quantile, low, high, cutoff, test_fraction;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> tasks, features;
  std::optional<std::string> mode, instances;
  bool full_grid = false;
  bool no_tune = false;
  bool no_explain = false;
};

void AddPipelineOptions(CLI::App& app, Overrides& o) {
  app.add_option("--config", o.config, "Configuration file (INI sections)");
  app.add_option("--out", o.out_dir, "Run directory");
  app.add_option("--food-db", o.food_db, "Food composition CSV");
  app.add_option("--posts", o.posts, "Post corpus, JSON Lines");
  app.add_option("--vectors", o.vectors, "Precomputed EMBV1 vectors");
  app.add_option("--fallback-dim", o.fallback_dim, "Dimension of the built-in embedder");
  app.add_option("--covid-bounds", o.covid_bounds, "Two ISO dates: <during>,<post>");
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--sample-size", o.sample_size, "Calibration sample size");
  app.add_option("--quantile", o.quantile, "Per-post similarity quantile");
  app.add_option("--threshold", o.threshold, "Fixed similarity threshold or 'auto'");
  app.add_option("--low", o.low, "Lowest retained kCal per 100 g");
  app.add_option("--high", o.high, "Highest retained kCal per 100 g");
  app.add_option("--task", o.tasks, "engagement and/or resonance")->delimiter(',');
  app.add_option("--features", o.features, "Feature sets such as C+N+E")->delimiter(',');
  app.add_option("--cutoff", o.cutoff, "Minimum relative word frequency");
  app.add_option("--test-fraction", o.test_fraction, "Held-out fraction");
  app.add_flag("--full-grid", o.full_grid, "Add the 50000-estimator grid point");
  app.add_flag("--no-tune", o.no_tune, "Use the [model] settings instead of tuning");
  app.add_option("--bootstrap", o.n_bootstrap, "Bootstrap resamples");
  app.add_flag("--no-explain", o.no_explain, "Skip Shapley explanations");
  app.add_option("--mode", o.mode, "auto, exact or sample");
  app.add_option("--instances", o.instances, "Post ids to explain, or 'all'");
  app.add_option("--max-instances", o.max_instances, "Cap on explained test rows");
  app.add_option("--background-size", o.background_size, "Background rows");
  app.add_option("--permutations", o.permutations, "Permutations per sampled explanation");
}

PipelineConfig ResolveConfig(const Overrides& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : nutripipe::LoadConfig(o.config);
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.food_db) c.food_db = *o.food_db;
  if (o.posts) c.posts = *o.posts;
  if (o.vectors) c.vectors = *o.vectors;
  if (o.fallback_dim) c.fallback_dim = *o.fallback_dim;
  if (o.covid_bounds) {
    const auto parts = nutripipe::Split(*o.covid_bounds, ',');
    if (parts.size() != 2) throw Error(ErrorCode::kConfig, "--covid-bounds takes two dates");
    c.covid_during = std::string(nutripipe::Trim(parts[0]));
    c.covid_post = std::string(nutripipe::Trim(parts[1]));
  }
  if (o.seed) c.seed = *o.seed;
  if (o.sample_size) c.sample_size = *o.sample_size;
  if (o.quantile) c.quantile = *o.quantile;
  if (o.threshold) c.threshold = *o.threshold;
  if (o.low) c.low_kcal = *o.low;
  if (o.high) c.high_kcal = *o.high;
  if (!o.tasks.empty()) c.tasks = o.tasks;
  if (!o.features.empty()) {
    c.feature_sets = o.features;
    std::vector<std::string> kept;
    for (const auto& e : c.explain_sets) {
      const std::string label = nutripipe::FeatureSet::Parse(e).Label();
      for (const auto& f : c.feature_sets) {
        if (nutripipe::FeatureSet::Parse(f).Label() == label) {
          kept.push_back(label);
          break;
        }
      }
    }
    c.explain_sets = kept;
    if (kept.empty()) c.explain = false;
  }
  if (o.cutoff) c.cutoff = *o.cutoff;
  if (o.test_fraction) c.test_fraction = *o.test_fraction;
  if (o.full_grid) c.grid_estimators = nutripipe::TuningGrid::Full().n_estimators;
  if (o.no_tune) c.tune = false;
  if (o.n_bootstrap) c.n_bootstrap = *o.n_bootstrap;
  if (o.no_explain) c.explain = false;
  if (o.mode) c.explain_mode = *o.mode;
  if (o.instances) c.instances = *o.instances;
  if (o.max_instances) c.max_instances = *o.max_instances;
  if (o.background_size) c.background_size = *o.background_size;
  if (o.permutations) c.permutations = *o.permutations;
  c.Validate();
  return c;
}

int RunUntil(const Overrides& o, Stage until) {
  const PipelineConfig config = ResolveConfig(o);
  const nutripipe::RunResult result = nutripipe::RunPipeline(config, until);
  for (const auto& s : result.stages) {
    std::cerr << "nutripipe: " << nutripipe::StageName(s.stage) << (s.cached ? " cached" : " done")
              << "\n";
  }
  std::cout << result.dir.string() << "\n";
  return 0;
}

int Report(const Overrides& o) {
  // Without --config the run directory's own config.ini is used.
  Overrides resolved = o;
  const std::filesystem::path dir = o.out_dir.value_or(PipelineConfig{}.out_dir);
  const auto stored = dir / nutripipe::artifacts::kConfig;
  if (o.config.empty() && std::filesystem::exists(stored)) resolved.config = stored.string();
  PipelineConfig config = ResolveConfig(resolved);
  config.out_dir = dir.string();
  nutripipe::WriteReport(config.out_dir, config);
  std::cout << (dir / nutripipe::artifacts::kReportDir).string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nutripipe: nutrition estimates and engagement models for food posts"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  AddPipelineOptions(app, o);

  const std::pair<const char*, Stage> stages[] = {
      {"ingest-db", Stage::kIngestDb},
      {"ingest-posts", Stage::kIngestPosts},
      {"calibrate", Stage::kCalibrate},
      {"estimate", Stage::kEstimate},
      {"featurize", Stage::kFeaturize},
      {"mine-discriminators", Stage::kMineDiscriminators},
      {"tune", Stage::kTune},
      {"train", Stage::kTrain},
      {"evaluate", Stage::kEvaluate},
      {"explain", Stage::kExplain},
  };
  std::vector<std::pair<CLI::App*, Stage>> stage_commands;
  for (const auto& [name, stage] : stages) {
    CLI::App* sub = app.add_subcommand(name, "Run the pipeline through " + std::string(name));
    if (stage == Stage::kIngestPosts) sub->alias("ingest");
    stage_commands.emplace_back(sub, stage);
  }
  CLI::App* run = app.add_subcommand("run", "Run every stage and write the report");
  CLI::App* report = app.add_subcommand("report", "Write the report of an existing run directory");

  CLI::App* gen = app.add_subcommand("gen-synthetic", "Write a synthetic food table and corpus");
  nutripipe::SyntheticOptions synth;
  std::string synth_out;
  gen->add_option("--out", synth_out, "Output directory")->required();
  gen->add_option("--count", synth.posts, "Number of posts");
  gen->add_option("--seed", synth.seed, "Generator seed");
  gen->add_option("--variants", synth.variants_per_food, "Food rows per base food");
  gen->add_option("--kcal-effect", synth.kcal_effect, "Logit change per 150 kCal");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (const auto& [sub, stage] : stage_commands) {
      if (sub->parsed()) return RunUntil(o, stage);
    }
    if (run->parsed()) return RunUntil(o, Stage::kReport);
    if (report->parsed()) return Report(o);
    if (gen->parsed()) {
      const nutripipe::SyntheticSummary s = nutripipe::GenerateSynthetic(synth_out, synth);
      std::cout << synth_out << ": " << s.food_items << " food rows, " << s.posts << " posts, "
                << s.posts_with_estimate << " with estimates, " << s.engaged << " engaged\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "nutripipe: " << e.what() << "\n";
    return nutripipe::ExitCodeFor(e);
  } catch (const std::exception& e) {
    std::cerr << "nutripipe: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
