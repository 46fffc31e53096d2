// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/dataset.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace crop {

class Mask;

enum class Activation { relu, identity };

struct DenseLayer {
  Eigen::MatrixXd weights;  ///< out x in
  Eigen::VectorXd bias;     ///< out
  Activation activation = Activation::relu;
};

/// Parameters of a dense MLP classifier: ReLU on hidden layers, identity on the output.
class ModelParams {
 public:
  ModelParams() = default;
  /// Validates chaining, activations and finiteness.
  explicit ModelParams(std::vector<DenseLayer> layers);

  /// All-zero model with the given dims (input, hidden..., classes).
  static ModelParams zeros(std::span<const std::size_t> layer_dims);
  /// He-normal weights, zero biases.
  static ModelParams random(std::span<const std::size_t> layer_dims, std::uint64_t seed);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::vector<std::size_t> layer_dims() const;
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  /// Number of weight-matrix entries (the prunable parameters).
  std::size_t weight_count() const;
  /// Weights plus biases.
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  /// Mutable access; callers must preserve shapes.
  DenseLayer& layer(std::size_t i) { return layers_.at(i); }

  bool congruent(const ModelParams& other) const;
  bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<DenseLayer> layers_;
};

/// Partial derivatives, shape-congruent with the model they came from.
struct GradientSet {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;

  static GradientSet zeros_like(const ModelParams& model);
  /// Per layer: weights row-major, then bias.
  Eigen::VectorXd flatten() const;
  double squared_norm() const;
  bool is_zero() const;
  GradientSet& operator+=(const GradientSet& other);
};

enum class Regularizer { none, l1, l2 };

const char* to_string(Regularizer reg);
Regularizer regularizer_from_string(const std::string& name);

struct TrainConfig {
  double learning_rate = 0.01;
  double alpha = 0.0;
  Regularizer regularizer = Regularizer::none;
  int epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool partial_finetune = false;
  double validation_fraction = 0.2;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  ///< training objective (CE + penalty) on the train split
  double val_loss = 0.0;    ///< mean cross-entropy on the validation split
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochRecord> history;  ///< epochs + 1 entries; entry 0 is the input model
  int best_epoch = 0;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> validation_rows;
};

Eigen::VectorXd forward(const ModelParams& model, std::span<const double> x);
/// Logits for every row of `x` (rows x classes).
Eigen::MatrixXd forward_batch(const ModelParams& model, const Eigen::MatrixXd& x);

/// Penalty over weight matrices only: sum |w| (l1), sum w^2 (l2) or 0, not yet scaled by alpha.
double weight_penalty(const ModelParams& model, Regularizer reg);

/// Mean softmax cross-entropy over the batch plus alpha * weight_penalty.
double loss_with_penalty(const ModelParams& model, const LabeledDataset& batch, const TrainConfig& cfg);

/// Exact gradient of loss_with_penalty; d|w|/dw is taken as 0 at w == 0. With
/// cfg.partial_finetune and a freeze mask, weights where the mask is 0 get zero gradient.
GradientSet backward(const ModelParams& model, const LabeledDataset& batch, const TrainConfig& cfg,
                     const Mask* freeze = nullptr);

/// Seeded stratified train/validation split, then mini-batch SGD for cfg.epochs.
/// Returns the snapshot with the lowest validation cross-entropy; the input model is
/// the epoch-0 candidate and ties go to the earliest epoch.
TrainResult train(const ModelParams& model, const LabeledDataset& data, const TrainConfig& cfg,
                  const Mask* freeze = nullptr);

/// Same loop over caller-chosen train/validation rows of `data`.
TrainResult train_on_split(const ModelParams& model, const LabeledDataset& data, std::vector<std::size_t> train_rows,
                           std::vector<std::size_t> validation_rows, const TrainConfig& cfg,
                           const Mask* freeze = nullptr);

namespace detail {

double cross_entropy(const ModelParams& model, const Eigen::MatrixXd& x, std::span<const int> y);

double objective(const ModelParams& model, const Eigen::MatrixXd& x, std::span<const int> y, double alpha,
                 Regularizer reg);

/// Gradient of objective(); `freeze` zeroes weight entries whose mask bit is 0.
GradientSet gradient(const ModelParams& model, const Eigen::MatrixXd& x, std::span<const int> y,
                     double alpha, Regularizer reg, const Mask* freeze);

/// Gradient of log softmax(model(x))[cls] for one sample.
GradientSet log_prob_gradient(const ModelParams& model, std::span<const double> x, int cls);

}  // namespace detail

}  // namespace crop
