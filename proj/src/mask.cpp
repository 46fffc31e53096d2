// SPDX-License-Identifier: Apache-2.0
#include "crop/mask.hpp"

#include "crop/error.hpp"
#include "crop/nn.hpp"

namespace crop {

Mask::Mask(std::vector<MaskMatrix> layers) : layers_(std::move(layers)) {
  for (const auto& l : layers_) {
    for (Eigen::Index i = 0; i < l.size(); ++i) {
      if (l.data()[i] > 1) throw UsageError("mask entries must be 0 or 1");
    }
  }
}

Mask Mask::ones(const ModelParams& model) {
  std::vector<MaskMatrix> layers;
  for (const auto& l : model.layers()) layers.push_back(MaskMatrix::Ones(l.weights.rows(), l.weights.cols()));
  return Mask(std::move(layers));
}

Mask Mask::zeros(const ModelParams& model) {
  std::vector<MaskMatrix> layers;
  for (const auto& l : model.layers()) layers.push_back(MaskMatrix::Zero(l.weights.rows(), l.weights.cols()));
  return Mask(std::move(layers));
}

Mask Mask::from_bits(const ModelParams& shape, const std::vector<bool>& bits) {
  if (bits.size() != shape.weight_count()) {
    throw StructuralError("mask has " + std::to_string(bits.size()) + " bits, model has " +
                          std::to_string(shape.weight_count()) + " weights");
  }
  Mask mask = Mask::zeros(shape);
  std::size_t k = 0;
  for (auto& l : mask.layers_) {
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.cols(); ++c) l(r, c) = bits[k++] ? 1 : 0;
    }
  }
  return mask;
}

std::size_t Mask::total() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.size());
  return n;
}

std::size_t Mask::zero_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    for (Eigen::Index i = 0; i < l.size(); ++i) n += l.data()[i] == 0 ? 1 : 0;
  }
  return n;
}

double Mask::prune_fraction() const {
  const std::size_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(zero_count()) / static_cast<double>(n);
}

bool Mask::congruent(const ModelParams& model) const {
  if (layers_.size() != model.num_layers()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& w = model.layer(i).weights;
    if (layers_[i].rows() != w.rows() || layers_[i].cols() != w.cols()) return false;
  }
  return true;
}

std::vector<bool> Mask::bits() const {
  std::vector<bool> out;
  out.reserve(total());
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.cols(); ++c) out.push_back(l(r, c) != 0);
    }
  }
  return out;
}

bool operator==(const Mask& a, const Mask& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].rows() != b.layers_[i].rows() || a.layers_[i].cols() != b.layers_[i].cols() ||
        a.layers_[i] != b.layers_[i]) {
      return false;
    }
  }
  return true;
}

}  // namespace crop
