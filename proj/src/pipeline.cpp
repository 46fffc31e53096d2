// SPDX-License-Identifier: Apache-2.0
#include "crop/pipeline.hpp"

#include "crop/error.hpp"

namespace crop {

void CropConfig::validate() const {
  train_initial.validate();
  train_final.validate();
  prune.validate();
  if (iterative_passes < 1) throw UsageError("iterative_passes must be at least 1");
}

ModelParams mix(const ModelParams& pruned, const ModelParams& generic, const Mask& mask) {
  if (!pruned.congruent(generic)) throw StructuralError("pruned and generic models differ in shape");
  if (!mask.congruent(pruned)) throw StructuralError("mask does not match model shape");
  ModelParams out = pruned;
  for (std::size_t li = 0; li < out.num_layers(); ++li) {
    auto& w = out.layer(li).weights;
    const auto& g = generic.layer(li).weights;
    const auto& m = mask.layer(li);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        if (m(r, c) == 0) w(r, c) = g(r, c);
      }
    }
  }
  return out;
}

TrainResult conventional_finetune_detailed(const ModelParams& generic, const LabeledDataset& data,
                                           const TrainConfig& cfg) {
  TrainConfig plain = cfg;
  plain.alpha = 0.0;
  plain.regularizer = Regularizer::none;
  plain.partial_finetune = false;
  return train(generic, data, plain);
}

ModelParams conventional_finetune(const ModelParams& generic, const LabeledDataset& data, const TrainConfig& cfg) {
  return conventional_finetune_detailed(generic, data, cfg).best;
}

CropResult crop_personalize(const ModelParams& generic, const LabeledDataset& data_available,
                            const CropConfig& cfg) {
  cfg.validate();
  if (data_available.empty()) throw UsageError("no data for the available context");

  CropResult result;
  const bool multi = cfg.iterative_passes > 1;

  TrainResult initial = train(generic, data_available, cfg.train_initial);
  result.histories.push_back({"finetune", initial.history, initial.best_epoch});
  result.validation_rows = initial.validation_rows;
  const LabeledDataset prune_data = data_available.subset(initial.validation_rows);

  ModelParams source = std::move(initial.best);
  ModelParams last_source, pruned, mixed;

  for (std::size_t pass = 0; pass < cfg.iterative_passes; ++pass) {
    std::optional<GradientSet> grads;
    if (cfg.prune.strategy == PruneStrategy::gradient_low) {
      const Batch b = prune_data.gather_all();
      grads = detail::gradient(source, b.x, b.y, 0.0, Regularizer::none, nullptr);
    }
    ToleratedPruneResult tp = tolerated_prune(source, cfg.prune, prune_data, cfg.metric, grads ? &*grads : nullptr);
    mixed = mix(tp.pruned, generic, tp.mask);
    pruned = std::move(tp.pruned);
    result.mask = std::move(tp.mask);
    result.prune_fraction = tp.fraction;

    TrainResult fin = train(mixed, data_available, cfg.train_final, &result.mask);
    result.histories.push_back({multi ? "final_" + std::to_string(pass + 1) : "final", fin.history, fin.best_epoch});
    last_source = std::move(source);
    source = std::move(fin.best);
  }

  result.final = source;
  if (cfg.keep_stage_snapshots) {
    result.stages = CropStages{generic, std::move(last_source), std::move(pruned), std::move(mixed), source};
  }
  return result;
}

}  // namespace crop
