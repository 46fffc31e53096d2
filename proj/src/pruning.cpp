// SPDX-License-Identifier: Apache-2.0
#include "crop/pruning.hpp"

#include "crop/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace crop {

namespace {

// Absorbs representation error of grid points such as 0.05 * 3.
constexpr double kFractionSlack = 1e-9;

}  // namespace

void PruneConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("tau must lie in (0,1]");
  if (!(k > 0.0 && k <= 1.0)) throw UsageError("k must lie in (0,1]");
  if (!(k_step > 0.0 && k_step <= 1.0)) throw UsageError("k_step must lie in (0,1]");
}

std::vector<double> PruneConfig::grid() const {
  validate();
  std::vector<double> out;
  for (std::size_t n = 0;; ++n) {
    const double p = k + static_cast<double>(n) * k_step;
    if (p > 1.0 + kFractionSlack) break;
    out.push_back(std::min(p, 1.0));
  }
  return out;
}

std::size_t prune_count(double fraction, std::size_t total) {
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + kFractionSlack));
  return std::min(n, total);
}

PruneResult prune(const ModelParams& model, double fraction, PruneStrategy strategy, const GradientSet* grads) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw UsageError("prune fraction must lie in [0,1]");
  if (strategy == PruneStrategy::gradient_low) {
    if (grads == nullptr) throw UsageError("gradient_low pruning needs gradients");
    if (grads->weights.size() != model.num_layers()) throw StructuralError("gradients do not match model");
    for (std::size_t i = 0; i < model.num_layers(); ++i) {
      if (grads->weights[i].rows() != model.layer(i).weights.rows() ||
          grads->weights[i].cols() != model.layer(i).weights.cols()) {
        throw StructuralError("gradients do not match model");
      }
    }
  }

  struct Entry {
    std::size_t layer;
    Eigen::Index row, col;
    double score;
  };
  std::vector<Entry> entries;
  entries.reserve(model.weight_count());
  for (std::size_t li = 0; li < model.num_layers(); ++li) {
    const auto& w = model.layer(li).weights;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const double s = strategy == PruneStrategy::gradient_low ? std::abs(grads->weights[li](r, c))
                                                                 : std::abs(w(r, c));
        entries.push_back({li, r, c, s});
      }
    }
  }
  // entries are already in (layer, row, col) order, so stable_sort keeps that as the tie-break.
  if (strategy == PruneStrategy::magnitude_top) {
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
  } else {
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });
  }

  PruneResult out{model, Mask::ones(model)};
  const std::size_t n = prune_count(fraction, entries.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = entries[i];
    out.pruned.layer(e.layer).weights(e.row, e.col) = 0.0;
    out.mask.layer(e.layer)(e.row, e.col) = 0;
  }
  return out;
}

ToleratedPruneResult tolerated_prune(const ModelParams& model, const PruneConfig& cfg, const LabeledDataset& data,
                                     MetricKind metric, const GradientSet* grads) {
  cfg.validate();
  if (data.empty()) throw UsageError("tolerated_prune needs data");

  ToleratedPruneResult result{model, Mask::ones(model), 0.0, 0.0, 0.0, {}};
  result.baseline_metric = evaluate(model, data, metric);
  result.metric = result.baseline_metric;
  const double floor_metric = result.baseline_metric - cfg.tau;

  for (double p : cfg.grid()) {
    PruneResult candidate = prune(model, p, cfg.strategy, grads);
    const double a = evaluate(candidate.pruned, data, metric);
    result.trace.push_back({p, a});
    if (a < floor_metric) break;
    result.pruned = std::move(candidate.pruned);
    result.mask = std::move(candidate.mask);
    result.fraction = p;
    result.metric = a;
  }
  return result;
}

Mask mask_of(const ModelParams& model) {
  Mask mask = Mask::ones(model);
  for (std::size_t li = 0; li < model.num_layers(); ++li) {
    const auto& w = model.layer(li).weights;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) mask.layer(li)(r, c) = w(r, c) == 0.0 ? 0 : 1;
    }
  }
  return mask;
}

const char* to_string(PruneStrategy strategy) {
  switch (strategy) {
    case PruneStrategy::magnitude_low: return "magnitude_low";
    case PruneStrategy::magnitude_top: return "magnitude_top";
    case PruneStrategy::gradient_low: return "gradient_low";
  }
  return "magnitude_low";
}

PruneStrategy strategy_from_string(const std::string& name) {
  if (name == "magnitude_low") return PruneStrategy::magnitude_low;
  if (name == "magnitude_top") return PruneStrategy::magnitude_top;
  if (name == "gradient_low") return PruneStrategy::gradient_low;
  throw UsageError("unknown prune strategy '" + name + "'");
}

}  // namespace crop
