// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/dataset.hpp"
#include "crop/metrics.hpp"
#include "crop/nn.hpp"
#include "crop/pipeline.hpp"
#include "crop/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace crop {

/// Everything one experiment needs: data, user/context roles, model shape and the
/// hyperparameters of every training stage. Per-run seeds are derived from `seeds`,
/// so the seed fields inside the TrainConfigs are ignored.
struct ExperimentConfig {
  enum class Source { synthetic, csv };

  Source source = Source::synthetic;
  std::filesystem::path csv_path;
  SyntheticSpec synthetic;

  /// Empty lists mean "the generator's generic/personal users" (synthetic only).
  std::vector<std::string> generic_users;
  std::vector<std::string> personal_users;
  std::vector<std::string> available_contexts = {"c0"};
  std::vector<std::string> unseen_contexts = {"c1"};

  std::vector<std::size_t> hidden = {32, 32};

  TrainConfig generic_train;
  TrainConfig conventional;
  CropConfig crop;

  std::vector<std::uint64_t> seeds = {1, 2, 3};
  MetricKind metric = MetricKind::accuracy;
  /// Share of each user's available-context rows held out for evaluation.
  double test_fraction = 0.5;
  std::filesystem::path output_dir = "runs/default";

  /// Checks config-only invariants; throws UsageError.
  void validate() const;
};

/// Hyperparameters scaled to a laptop CPU; also the parse defaults for missing keys.
ExperimentConfig desk_scale_profile();

/// JSON config. Missing keys keep desk_scale_profile() values; unknown keys are errors.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// Config plus loaded data with user lists resolved and cross-checked against it.
struct Experiment {
  ExperimentConfig cfg;
  LabeledDataset data;
  std::vector<std::string> generic_users;
  std::vector<std::string> personal_users;

  std::vector<std::string> all_contexts() const;
  std::vector<std::size_t> layer_dims() const;
};

/// Loads the data and checks that users and contexts exist, that available and
/// unseen contexts are disjoint, and that personal users are not generic users.
Experiment resolve_experiment(const ExperimentConfig& cfg);

/// Seeds of one (user, seed) personalization run.
struct RunSeeds {
  std::uint64_t test_split = 0;
  std::uint64_t finetune = 0;  ///< shared by conventional and the first CRoP stage
  std::uint64_t final = 0;
};
RunSeeds derive_run_seeds(std::uint64_t seed, const std::string& user);

/// Generic model on all contexts of the generic users, person-disjoint validation.
TrainResult train_generic(const Experiment& ex, std::uint64_t seed);

struct UserSplit {
  std::string user;
  /// Available-context rows handed to personalization.
  LabeledDataset available;
  /// Evaluation data per context: held-out rows for available contexts, every row
  /// for unseen ones. Ordered as available contexts, then unseen.
  std::vector<std::pair<std::string, LabeledDataset>> eval;
};
UserSplit split_user(const Experiment& ex, const std::string& user, std::uint64_t seed);

ContextScores score_contexts(const ModelParams& model, const UserSplit& split, MetricKind metric);

TrainConfig conventional_config(const ExperimentConfig& cfg, const RunSeeds& seeds);
CropConfig crop_config(const ExperimentConfig& cfg, const RunSeeds& seeds);

struct GipRecord {
  std::string user;
  std::uint64_t seed = 0;
  int step = 0;       ///< algorithm step the state comes out of (2..5)
  std::string stage;  ///< finetuned, pruned, mixed, final
  double value = 0.0;
};

/// GIP of every CRoP stage over the user's available and unseen contexts (all rows).
std::vector<GipRecord> stage_gip(const Experiment& ex, const std::string& user, std::uint64_t seed,
                                 const CropStages& stages);

/// In-memory run of the whole protocol. Report states: generic, conventional, crop,
/// crop_finetuned, crop_pruned, crop_mixed.
struct BenchmarkResult {
  EvalReport report;
  std::vector<GipRecord> gip;
  std::map<std::uint64_t, ModelParams> generics;
};

/// `generics` lets callers reuse generic models across configs that share data and
/// generic training. Jobs fan out over worker_count() threads; output order is fixed.
BenchmarkResult run_benchmark(const Experiment& ex,
                              const std::map<std::uint64_t, ModelParams>* generics = nullptr);

/// CROP_THREADS if set (>= 1), else the hardware concurrency.
std::size_t worker_count();
/// Runs fn(0..n-1) on up to worker_count() threads and rethrows the first failure by index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace crop
