// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/dataset.hpp"
#include "crop/mask.hpp"
#include "crop/metrics.hpp"
#include "crop/nn.hpp"
#include "crop/pruning.hpp"

#include <optional>
#include <string>
#include <vector>

namespace crop {

struct CropConfig {
  TrainConfig train_initial;  ///< penalized finetune of the generic model
  PruneConfig prune;
  TrainConfig train_final;    ///< finetune of the mixed model
  std::size_t iterative_passes = 1;
  bool keep_stage_snapshots = true;
  MetricKind metric = MetricKind::accuracy;  ///< metric the prune tolerance is measured in

  void validate() const;
};

/// Model states of the last pass, in pipeline order.
struct CropStages {
  ModelParams generic;
  ModelParams finetuned;
  ModelParams pruned;
  ModelParams mixed;
  ModelParams final;
};

struct StageHistory {
  std::string stage;  ///< "finetune" or "final", suffixed with the pass index when passes > 1
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

struct CropResult {
  ModelParams final;
  std::optional<CropStages> stages;
  Mask mask;                 ///< pruning mask of the last pass
  double prune_fraction = 0.0;
  std::vector<StageHistory> histories;
  /// Validation rows (of the available data) used for pruning and model selection.
  std::vector<std::size_t> validation_rows;
};

/// Weights from `pruned` where the mask is 1, from `generic` where it is 0; biases from `pruned`.
ModelParams mix(const ModelParams& pruned, const ModelParams& generic, const Mask& mask);

/// Plain finetune (alpha = 0, no regularizer) of the generic model.
TrainResult conventional_finetune_detailed(const ModelParams& generic, const LabeledDataset& data,
                                           const TrainConfig& cfg);
ModelParams conventional_finetune(const ModelParams& generic, const LabeledDataset& data, const TrainConfig& cfg);

/// Penalized finetune -> tolerated prune on the validation split -> mix with the
/// generic weights -> penalized finetune, where the mixed model itself competes in
/// model selection. Additional passes repeat prune -> mix -> finetune on the
/// previous result. Reads nothing but `data_available`.
CropResult crop_personalize(const ModelParams& generic, const LabeledDataset& data_available, const CropConfig& cfg);

}  // namespace crop
