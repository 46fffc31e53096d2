// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/dataset.hpp"
#include "crop/nn.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <span>

namespace crop {

/// Gradient inner product across domains: ||sum_i G_i||^2 - sum_i ||G_i||^2, where
/// G_i is the full-batch cross-entropy gradient (no penalty) on domain i, flattened
/// over all weights and biases. Equals 2 <G_1, G_2> for two domains.
double gip(const ModelParams& model, std::span<const LabeledDataset> domains);

/// |w| of one layer's weight matrix.
Eigen::MatrixXd magnitude_heatmap(const ModelParams& model, std::size_t layer_index);
/// Plain numeric grid, one matrix row per line, 17 significant digits.
void write_matrix_csv(const Eigen::MatrixXd& matrix, const std::filesystem::path& path);

/// Trace of the Fisher information under the model's own predictive distribution:
/// mean over rows of sum_c p_c * ||d log p_c / d theta||^2. Always >= 0.
double fim_trace(const ModelParams& model, const LabeledDataset& data);

}  // namespace crop
