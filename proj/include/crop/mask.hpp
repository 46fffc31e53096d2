// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace crop {

class ModelParams;

using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Binary keep/prune flag per weight entry (1 = kept). Biases carry no mask.
class Mask {
 public:
  Mask() = default;
  explicit Mask(std::vector<MaskMatrix> layers);

  static Mask ones(const ModelParams& model);
  static Mask zeros(const ModelParams& model);
  /// Rebuilds a mask from bits in (layer, row, col) order.
  static Mask from_bits(const ModelParams& shape, const std::vector<bool>& bits);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  const MaskMatrix& layer(std::size_t i) const { return layers_.at(i); }
  MaskMatrix& layer(std::size_t i) { return layers_.at(i); }

  bool keeps(std::size_t layer, Eigen::Index row, Eigen::Index col) const {
    return layers_[layer](row, col) != 0;
  }

  std::size_t total() const;
  std::size_t zero_count() const;
  /// zero_count() / total(), exactly.
  double prune_fraction() const;
  bool congruent(const ModelParams& model) const;
  std::vector<bool> bits() const;

  friend bool operator==(const Mask& a, const Mask& b);

 private:
  std::vector<MaskMatrix> layers_;
};

}  // namespace crop
