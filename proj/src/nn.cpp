// SPDX-License-Identifier: Apache-2.0
#include "crop/nn.hpp"

#include "crop/error.hpp"
#include "crop/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace crop {

// ---------------------------------------------------------------------------
// ModelParams

ModelParams::ModelParams(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw StructuralError("model needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weights.rows() == 0 || l.weights.cols() == 0) throw StructuralError("empty weight matrix");
    if (l.bias.size() != l.weights.rows()) {
      throw StructuralError("layer " + std::to_string(i) + ": bias length does not match weight rows");
    }
    if (i + 1 < layers_.size() && layers_[i + 1].weights.cols() != l.weights.rows()) {
      throw StructuralError("layer " + std::to_string(i + 1) + " input does not match layer " +
                            std::to_string(i) + " output");
    }
    const Activation expected = i + 1 == layers_.size() ? Activation::identity : Activation::relu;
    if (l.activation != expected) {
      throw StructuralError("hidden layers use ReLU and the output layer is linear");
    }
  }
  if (!all_finite()) throw NumericError("model parameters contain NaN or Inf");
}

ModelParams ModelParams::zeros(std::span<const std::size_t> layer_dims) {
  if (layer_dims.size() < 2) throw StructuralError("need at least input and output dims");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    if (layer_dims[i] == 0 || layer_dims[i + 1] == 0) throw StructuralError("layer dims must be positive");
    const auto in = static_cast<Eigen::Index>(layer_dims[i]);
    const auto out = static_cast<Eigen::Index>(layer_dims[i + 1]);
    layers.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out),
                      i + 2 == layer_dims.size() ? Activation::identity : Activation::relu});
  }
  return ModelParams(std::move(layers));
}

ModelParams ModelParams::random(std::span<const std::size_t> layer_dims, std::uint64_t seed) {
  ModelParams model = zeros(layer_dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& l : model.layers_) {
    const double scale = std::sqrt(2.0 / static_cast<double>(l.weights.cols()));
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = scale * normal(rng);
    }
  }
  return model;
}

std::vector<std::size_t> ModelParams::layer_dims() const {
  std::vector<std::size_t> dims;
  if (layers_.empty()) return dims;
  dims.push_back(static_cast<std::size_t>(layers_.front().weights.cols()));
  for (const auto& l : layers_) dims.push_back(static_cast<std::size_t>(l.weights.rows()));
  return dims;
}

std::size_t ModelParams::input_dim() const {
  if (layers_.empty()) throw StructuralError("empty model");
  return static_cast<std::size_t>(layers_.front().weights.cols());
}

std::size_t ModelParams::output_dim() const {
  if (layers_.empty()) throw StructuralError("empty model");
  return static_cast<std::size_t>(layers_.back().weights.rows());
}

std::size_t ModelParams::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size());
  return n;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = weight_count();
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.bias.size());
  return n;
}

bool ModelParams::congruent(const ModelParams& other) const { return layer_dims() == other.layer_dims(); }

bool ModelParams::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const DenseLayer& l) { return l.weights.allFinite() && l.bias.allFinite(); });
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!a.congruent(b)) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].weights != b.layers_[i].weights || a.layers_[i].bias != b.layers_[i].bias) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// GradientSet

GradientSet GradientSet::zeros_like(const ModelParams& model) {
  GradientSet g;
  for (const auto& l : model.layers()) {
    g.weights.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

Eigen::VectorXd GradientSet::flatten() const {
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + bias[i].size();
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (Eigen::Index r = 0; r < weights[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < weights[i].cols(); ++c) out(k++) = weights[i](r, c);
    }
    for (Eigen::Index r = 0; r < bias[i].size(); ++r) out(k++) = bias[i](r);
  }
  return out;
}

double GradientSet::squared_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i].squaredNorm() + bias[i].squaredNorm();
  return s;
}

bool GradientSet::is_zero() const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!weights[i].isZero(0.0) || !bias[i].isZero(0.0)) return false;
  }
  return true;
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
  if (other.weights.size() != weights.size()) throw StructuralError("gradient shapes differ");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] += other.weights[i];
    bias[i] += other.bias[i];
  }
  return *this;
}

// ---------------------------------------------------------------------------
// TrainConfig

const char* to_string(Regularizer reg) {
  switch (reg) {
    case Regularizer::none: return "none";
    case Regularizer::l1: return "l1";
    case Regularizer::l2: return "l2";
  }
  return "?";
}

Regularizer regularizer_from_string(const std::string& name) {
  if (name == "none") return Regularizer::none;
  if (name == "l1") return Regularizer::l1;
  if (name == "l2") return Regularizer::l2;
  throw UsageError("unknown regularizer '" + name + "' (expected none, l1 or l2)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning_rate must be positive");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw UsageError("alpha must be nonnegative");
  if (epochs < 0) throw UsageError("epochs must be nonnegative");
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw UsageError("validation_fraction must lie in (0,1)");
  }
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] = input, activations[L] = logits
};

ForwardCache run_forward(const ModelParams& model, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
    throw StructuralError("input has " + std::to_string(x.cols()) + " features, model expects " +
                          std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  cache.activations.reserve(model.num_layers() + 1);
  cache.activations.push_back(x);
  for (const auto& l : model.layers()) {
    Eigen::MatrixXd z = cache.activations.back() * l.weights.transpose();
    z.rowwise() += l.bias.transpose();
    if (l.activation == Activation::relu) z = z.cwiseMax(0.0);
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

void check_labels(const ModelParams& model, std::span<const int> y) {
  const auto k = static_cast<int>(model.output_dim());
  for (int label : y) {
    if (label < 0 || label >= k) {
      throw UsageError("label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
    }
  }
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

// Backpropagates dL/dlogits through the cached forward pass.
GradientSet backprop(const ModelParams& model, const ForwardCache& cache, Eigen::MatrixXd delta) {
  GradientSet g = GradientSet::zeros_like(model);
  for (std::size_t li = model.num_layers(); li-- > 0;) {
    const auto& a_in = cache.activations[li];
    g.weights[li].noalias() = delta.transpose() * a_in;
    g.bias[li] = delta.colwise().sum().transpose();
    if (li > 0) {
      Eigen::MatrixXd upstream = delta * model.layer(li).weights;
      // ReLU derivative: 1 where the post-activation is positive, 0 otherwise (including z == 0).
      delta = upstream.cwiseProduct((a_in.array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

void apply_penalty_gradient(const ModelParams& model, GradientSet& g, double alpha, Regularizer reg) {
  if (alpha == 0.0 || reg == Regularizer::none) return;
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const auto& w = model.layer(i).weights;
    if (reg == Regularizer::l1) {
      g.weights[i] += alpha * w.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    } else {
      g.weights[i] += 2.0 * alpha * w;
    }
  }
}

void apply_freeze(GradientSet& g, const Mask& freeze) {
  for (std::size_t i = 0; i < g.weights.size(); ++i) {
    g.weights[i] = g.weights[i].cwiseProduct(freeze.layer(i).cast<double>());
  }
}

}  // namespace

Eigen::VectorXd forward(const ModelParams& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw StructuralError("input has " + std::to_string(x.size()) + " features, model expects " +
                          std::to_string(model.input_dim()));
  }
  Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (const auto& l : model.layers()) {
    Eigen::VectorXd z = l.weights * h + l.bias;
    h = l.activation == Activation::relu ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  return h;
}

Eigen::MatrixXd forward_batch(const ModelParams& model, const Eigen::MatrixXd& x) {
  return std::move(run_forward(model, x).activations.back());
}

double weight_penalty(const ModelParams& model, Regularizer reg) {
  double s = 0.0;
  for (const auto& l : model.layers()) {
    switch (reg) {
      case Regularizer::l1: s += l.weights.cwiseAbs().sum(); break;
      case Regularizer::l2: s += l.weights.squaredNorm(); break;
      case Regularizer::none: break;
    }
  }
  return s;
}

namespace detail {

double cross_entropy(const ModelParams& model, const Eigen::MatrixXd& x, std::span<const int> y) {
  if (x.rows() == 0) throw UsageError("empty batch");
  check_labels(model, y);
  const Eigen::MatrixXd logits = forward_batch(model, x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, y[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

double objective(const ModelParams& model, const Eigen::MatrixXd& x, std::span<const int> y, double alpha,
                 Regularizer reg) {
  const double ce = cross_entropy(model, x, y);
  return alpha == 0.0 ? ce : ce + alpha * weight_penalty(model, reg);
}

GradientSet gradient(const ModelParams& model, const Eigen::MatrixXd& x, std::span<const int> y, double alpha,
                     Regularizer reg, const Mask* freeze) {
  if (x.rows() == 0) throw UsageError("empty batch");
  check_labels(model, y);
  const ForwardCache cache = run_forward(model, x);
  Eigen::MatrixXd delta = softmax_rows(cache.activations.back());
  for (Eigen::Index i = 0; i < delta.rows(); ++i) delta(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  delta /= static_cast<double>(x.rows());
  GradientSet g = backprop(model, cache, std::move(delta));
  apply_penalty_gradient(model, g, alpha, reg);
  if (freeze != nullptr) {
    if (!freeze->congruent(model)) throw StructuralError("freeze mask does not match model");
    apply_freeze(g, *freeze);
  }
  return g;
}

GradientSet log_prob_gradient(const ModelParams& model, std::span<const double> x, int cls) {
  const Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const ForwardCache cache = run_forward(model, row);
  Eigen::MatrixXd delta = -softmax_rows(cache.activations.back());
  delta(0, cls) += 1.0;
  return backprop(model, cache, std::move(delta));
}

}  // namespace detail

double loss_with_penalty(const ModelParams& model, const LabeledDataset& batch, const TrainConfig& cfg) {
  if (batch.empty()) throw UsageError("empty batch");
  const Batch b = batch.gather_all();
  return detail::objective(model, b.x, b.y, cfg.alpha, cfg.regularizer);
}

GradientSet backward(const ModelParams& model, const LabeledDataset& batch, const TrainConfig& cfg,
                     const Mask* freeze) {
  if (batch.empty()) throw UsageError("empty batch");
  const Batch b = batch.gather_all();
  return detail::gradient(model, b.x, b.y, cfg.alpha, cfg.regularizer, cfg.partial_finetune ? freeze : nullptr);
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(const ModelParams& model, const LabeledDataset& data, const TrainConfig& cfg,
                  const Mask* freeze) {
  cfg.validate();
  if (data.empty()) throw UsageError("training data is empty");
  for (std::size_t count : data.class_counts()) {
    if (count == 1) throw UsageError("a class has fewer than 2 samples; cannot stratify");
  }
  const double fractions[] = {1.0 - cfg.validation_fraction, cfg.validation_fraction};
  auto parts = split(data, fractions, Stratify::label, cfg.seed);
  return train_on_split(model, data, std::move(parts[0]), std::move(parts[1]), cfg, freeze);
}

TrainResult train_on_split(const ModelParams& model, const LabeledDataset& data, std::vector<std::size_t> train_rows,
                           std::vector<std::size_t> validation_rows, const TrainConfig& cfg, const Mask* freeze) {
  cfg.validate();
  if (train_rows.empty() || validation_rows.empty()) throw UsageError("train and validation splits must be nonempty");
  for (auto r : train_rows) {
    if (r >= data.size()) throw UsageError("train row out of range");
  }
  for (auto r : validation_rows) {
    if (r >= data.size()) throw UsageError("validation row out of range");
  }
  if (data.feature_dim() != model.input_dim()) throw StructuralError("data dimension does not match model input");
  if (data.num_classes() > model.output_dim()) throw StructuralError("data has more classes than the model outputs");
  if (cfg.partial_finetune && freeze != nullptr && !freeze->congruent(model)) {
    throw StructuralError("freeze mask does not match model");
  }
  const Mask* active_freeze = cfg.partial_finetune ? freeze : nullptr;

  TrainResult result;
  result.train_rows = std::move(train_rows);
  result.validation_rows = std::move(validation_rows);
  const Batch tr = data.gather(result.train_rows);
  const Batch va = data.gather(result.validation_rows);

  ModelParams current = model;
  result.best = model;
  double best_val = detail::cross_entropy(current, va.x, va.y);
  result.history.push_back({0, detail::objective(current, tr.x, tr.y, cfg.alpha, cfg.regularizer), best_val});

  // Separate stream from the split so the split does not depend on shuffling.
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(result.train_rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto dim = tr.x.cols();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(n), dim);
      std::vector<int> yb(n);
      for (std::size_t i = 0; i < n; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = tr.x.row(static_cast<Eigen::Index>(order[start + i]));
        yb[i] = tr.y[order[start + i]];
      }
      const GradientSet g = detail::gradient(current, xb, yb, cfg.alpha, cfg.regularizer, active_freeze);
      for (std::size_t li = 0; li < current.num_layers(); ++li) {
        auto& l = current.layer(li);
        l.weights -= cfg.learning_rate * g.weights[li];
        l.bias -= cfg.learning_rate * g.bias[li];
      }
    }
    if (!current.all_finite()) {
      throw NumericError("training diverged (NaN/Inf) at epoch " + std::to_string(epoch));
    }
    const double val = detail::cross_entropy(current, va.x, va.y);
    result.history.push_back({epoch, detail::objective(current, tr.x, tr.y, cfg.alpha, cfg.regularizer), val});
    if (val < best_val) {
      best_val = val;
      result.best = current;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace crop
