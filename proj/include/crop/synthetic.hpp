// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/dataset.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace crop {

/// How one context distorts a user's feature vectors.
struct ContextTransform {
  /// Givens rotation angle (radians) applied in the coordinate planes (0,1), (2,3), ...
  double rotation = 0.0;
  /// Length of the context's additive bias; its direction is drawn from the seed.
  double bias_scale = 0.0;
};

/// Multi-user, multi-context Gaussian class-cluster generator.
///
/// Class means are `class_separation` times K orthonormal directions (K <= D), or
/// isotropic Gaussian draws of that scale when K > D. Each user jitters every mean
/// by N(0, user_jitter^2). A sample of class k for user u in context c is
///   x = Q_c (mu_{u,k} + noise_sigma * eps) + b_c,
/// with Q_c orthogonal, so every context keeps the classes separable while moving
/// the decision boundaries.
struct SyntheticSpec {
  std::size_t num_generic_users = 16;
  std::size_t num_personal_users = 5;
  std::size_t num_classes = 4;
  std::size_t feature_dim = 8;
  double class_separation = 3.0;
  double user_jitter = 0.8;
  double noise_sigma = 1.0;
  std::vector<ContextTransform> contexts = {{0.0, 0.0}, {1.25, 0.0}};
  std::size_t samples_per_cell = 30;  ///< per (user, context, class)
  std::uint64_t seed = 7;

  void validate() const;

  static std::string generic_user_id(std::size_t i);
  static std::string personal_user_id(std::size_t i);
  static std::string context_id(std::size_t c);
  std::vector<std::string> generic_users() const;
  std::vector<std::string> personal_users() const;
  std::vector<std::string> context_ids() const;
};

/// Ground truth behind a generated dataset, for oracles.
struct SyntheticTruth {
  /// user id -> K x D matrix of that user's (pre-transform) class means.
  std::vector<std::pair<std::string, Eigen::MatrixXd>> user_means;
  std::vector<Eigen::MatrixXd> rotations;  ///< Q_c per context
  std::vector<Eigen::VectorXd> biases;     ///< b_c per context
  double noise_sigma = 0.0;

  const Eigen::MatrixXd& means_of(const std::string& user) const;
};

struct SyntheticData {
  LabeledDataset data;
  SyntheticTruth truth;
};

/// Rows are ordered by user (generic first), then context, class, sample.
LabeledDataset generate(const SyntheticSpec& spec);
SyntheticData generate_with_truth(const SyntheticSpec& spec);

/// Orthogonal map applying `angle` in the planes (0,1), (2,3), ...; odd D leaves the last axis.
Eigen::MatrixXd plane_rotation(std::size_t dim, double angle);

}  // namespace crop
