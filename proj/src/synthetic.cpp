// SPDX-License-Identifier: Apache-2.0
#include "crop/synthetic.hpp"

#include "crop/error.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace crop {

namespace {

std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02zu", prefix, i);
  return buf;
}

Eigen::VectorXd normal_vector(std::size_t n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * normal(rng);
  return v;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_generic_users == 0 || num_personal_users == 0) throw UsageError("user counts must be positive");
  if (num_classes < 2) throw UsageError("need at least 2 classes");
  if (feature_dim == 0) throw UsageError("feature_dim must be positive");
  if (samples_per_cell == 0) throw UsageError("samples_per_cell must be positive");
  if (!(noise_sigma > 0.0)) throw UsageError("noise_sigma must be positive");
  if (!(user_jitter >= 0.0) || !(class_separation > 0.0)) throw UsageError("invalid jitter/separation");
  if (contexts.size() < 2) throw UsageError("need at least 2 contexts");
  for (std::size_t a = 0; a < contexts.size(); ++a) {
    for (std::size_t b = a + 1; b < contexts.size(); ++b) {
      if (contexts[a].rotation == contexts[b].rotation &&
          contexts[a].bias_scale == contexts[b].bias_scale) {
        throw UsageError("contexts " + std::to_string(a) + " and " + std::to_string(b) +
                         " have identical transforms");
      }
    }
  }
}

std::string SyntheticSpec::generic_user_id(std::size_t i) { return padded("g", i); }
std::string SyntheticSpec::personal_user_id(std::size_t i) { return padded("p", i); }
std::string SyntheticSpec::context_id(std::size_t c) { return "c" + std::to_string(c); }

std::vector<std::string> SyntheticSpec::generic_users() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < num_generic_users; ++i) out.push_back(generic_user_id(i));
  return out;
}

std::vector<std::string> SyntheticSpec::personal_users() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < num_personal_users; ++i) out.push_back(personal_user_id(i));
  return out;
}

std::vector<std::string> SyntheticSpec::context_ids() const {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < contexts.size(); ++c) out.push_back(context_id(c));
  return out;
}

const Eigen::MatrixXd& SyntheticTruth::means_of(const std::string& user) const {
  for (const auto& [id, means] : user_means) {
    if (id == user) return means;
  }
  throw UsageError("unknown user " + user);
}

Eigen::MatrixXd plane_rotation(std::size_t dim, double angle) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (Eigen::Index i = 0; i + 1 < static_cast<Eigen::Index>(dim); i += 2) {
    q(i, i) = c;
    q(i, i + 1) = -s;
    q(i + 1, i) = s;
    q(i + 1, i + 1) = c;
  }
  return q;
}

SyntheticData generate_with_truth(const SyntheticSpec& spec) {
  spec.validate();
  const auto K = static_cast<Eigen::Index>(spec.num_classes);
  const auto D = static_cast<Eigen::Index>(spec.feature_dim);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Global class means.
  Eigen::MatrixXd means(K, D);
  if (K <= D) {
    Eigen::MatrixXd raw(D, K);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(D, K);
    means = spec.class_separation * q.transpose();
  } else {
    for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = spec.class_separation * normal(rng);
  }

  SyntheticTruth truth;
  truth.noise_sigma = spec.noise_sigma;
  for (const auto& ctx : spec.contexts) {
    truth.rotations.push_back(plane_rotation(spec.feature_dim, ctx.rotation));
    Eigen::VectorXd dir = normal_vector(spec.feature_dim, 1.0, rng);
    dir /= dir.norm();
    truth.biases.push_back(ctx.bias_scale * dir);
  }

  LabeledDataset data(spec.feature_dim, spec.num_classes);
  const auto contexts = spec.context_ids();
  std::vector<std::string> users = spec.generic_users();
  for (const auto& u : spec.personal_users()) users.push_back(u);

  std::vector<double> row(spec.feature_dim);
  for (const auto& user : users) {
    Eigen::MatrixXd user_means = means;
    for (Eigen::Index i = 0; i < user_means.size(); ++i) user_means.data()[i] += spec.user_jitter * normal(rng);
    for (std::size_t c = 0; c < contexts.size(); ++c) {
      for (Eigen::Index k = 0; k < K; ++k) {
        for (std::size_t n = 0; n < spec.samples_per_cell; ++n) {
          Eigen::VectorXd z = user_means.row(k).transpose() + normal_vector(spec.feature_dim, spec.noise_sigma, rng);
          const Eigen::VectorXd x = truth.rotations[c] * z + truth.biases[c];
          for (Eigen::Index j = 0; j < D; ++j) row[static_cast<std::size_t>(j)] = x(j);
          data.add_row(user, contexts[c], static_cast<int>(k), row);
        }
      }
    }
    truth.user_means.emplace_back(user, std::move(user_means));
  }
  return {std::move(data), std::move(truth)};
}

LabeledDataset generate(const SyntheticSpec& spec) { return generate_with_truth(spec).data; }

}  // namespace crop
