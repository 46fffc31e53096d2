// SPDX-License-Identifier: Apache-2.0
#include "crop/diagnostics.hpp"

#include "crop/error.hpp"

#include <charconv>
#include <fstream>

namespace crop {

double gip(const ModelParams& model, std::span<const LabeledDataset> domains) {
  if (domains.size() < 2) throw UsageError("gip needs at least two domains");
  Eigen::VectorXd sum;
  double sum_of_squares = 0.0;
  for (const auto& d : domains) {
    if (d.empty()) throw UsageError("gip domain is empty");
    const Batch b = d.gather_all();
    const Eigen::VectorXd g = detail::gradient(model, b.x, b.y, 0.0, Regularizer::none, nullptr).flatten();
    sum_of_squares += g.squaredNorm();
    if (sum.size() == 0) {
      sum = g;
    } else {
      sum += g;
    }
  }
  return sum.squaredNorm() - sum_of_squares;
}

Eigen::MatrixXd magnitude_heatmap(const ModelParams& model, std::size_t layer_index) {
  if (layer_index >= model.num_layers()) {
    throw UsageError("layer index " + std::to_string(layer_index) + " out of range (model has " +
                     std::to_string(model.num_layers()) + " layers)");
  }
  return model.layer(layer_index).weights.cwiseAbs();
}

void write_matrix_csv(const Eigen::MatrixXd& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  char buf[64];
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), matrix(r, c), std::chars_format::general, 17);
      if (c > 0) out << ',';
      out << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

double fim_trace(const ModelParams& model, const LabeledDataset& data) {
  if (data.empty()) throw UsageError("fim_trace needs data");
  const Batch b = data.gather_all();
  const Eigen::MatrixXd logits = forward_batch(model, b.x);
  const auto k = static_cast<int>(model.output_dim());
  double total = 0.0;
  for (Eigen::Index i = 0; i < b.x.rows(); ++i) {
    const Eigen::RowVectorXd row = b.x.row(i);
    const std::span<const double> x(row.data(), static_cast<std::size_t>(row.size()));
    Eigen::RowVectorXd p = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    p /= p.sum();
    for (int c = 0; c < k; ++c) {
      if (p(c) == 0.0) continue;
      total += p(c) * detail::log_prob_gradient(model, x, c).squared_norm();
    }
  }
  return total / static_cast<double>(b.x.rows());
}

}  // namespace crop
