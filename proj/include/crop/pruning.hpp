// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/dataset.hpp"
#include "crop/mask.hpp"
#include "crop/metrics.hpp"
#include "crop/nn.hpp"

#include <vector>

namespace crop {

enum class PruneStrategy {
  magnitude_low,  ///< zero the smallest |w|
  magnitude_top,  ///< zero the largest |w|
  gradient_low    ///< zero the weights with the smallest |dL/dw|
};

struct PruneConfig {
  double tau = 0.05;     ///< tolerated metric drop, absolute fraction
  double k = 0.05;       ///< first prune fraction
  double k_step = 0.05;  ///< increment per step
  PruneStrategy strategy = PruneStrategy::magnitude_low;

  void validate() const;
  /// Grid fractions k, k + k_step, ... up to and including 1.0.
  std::vector<double> grid() const;
};

struct PruneResult {
  ModelParams pruned;
  Mask mask;
};

/// Ranks all weight entries across layers and zeroes the first floor(p * N).
/// Ties keep (layer, row, col) order. Biases are never pruned; `model` is not modified.
PruneResult prune(const ModelParams& model, double fraction, PruneStrategy strategy,
                  const GradientSet* grads = nullptr);

/// Number of entries prune() zeroes for N weights at `fraction`.
std::size_t prune_count(double fraction, std::size_t total);

struct PruneStep {
  double fraction = 0.0;
  double metric = 0.0;
};

struct ToleratedPruneResult {
  ModelParams pruned;
  Mask mask;
  double fraction = 0.0;         ///< grid fraction of the returned state (0 = unpruned)
  double baseline_metric = 0.0;  ///< metric of the input model on the data
  double metric = 0.0;           ///< metric of the returned state
  std::vector<PruneStep> trace;  ///< every evaluated grid point, including the failing one
};

/// Grid search over prune fractions k, k + k_step, ...: each grid point prunes a fresh
/// copy of `model`; the search stops at the first point whose metric falls below
/// baseline - tau (or past 1.0) and returns the previous state. If the first grid
/// point already fails, the unpruned model comes back with an all-ones mask.
ToleratedPruneResult tolerated_prune(const ModelParams& model, const PruneConfig& cfg, const LabeledDataset& data,
                                     MetricKind metric, const GradientSet* grads = nullptr);

/// Mask bit is 0 exactly where the weight is 0.
Mask mask_of(const ModelParams& model);

const char* to_string(PruneStrategy strategy);
PruneStrategy strategy_from_string(const std::string& name);

}  // namespace crop
