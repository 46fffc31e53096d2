// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace crop {

/// Callback invoked with (user, context) each time a row's features are read.
using AccessObserver = std::function<void(const std::string& user, const std::string& context)>;

/// Dense feature matrix (rows x D) plus labels, gathered from a dataset.
struct Batch {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

/// Rows of (user, context, label, features). All rows share the feature dimension.
///
/// Subsets and filters copy rows and keep the parent's class count, so labels stay
/// comparable across partitions. An optional AccessObserver is inherited by every
/// derived dataset; it fires on feature reads only (metadata reads are silent).
class LabeledDataset {
 public:
  LabeledDataset() = default;
  explicit LabeledDataset(std::size_t feature_dim, std::size_t num_classes = 0);

  void add_row(std::string user, std::string context, int label, std::span<const double> features);

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t feature_dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  /// Raises the class count (labels never exceed it). Shrinking is a usage error.
  void set_num_classes(std::size_t k);

  const std::string& user(std::size_t row) const { return users_.at(row); }
  const std::string& context(std::size_t row) const { return contexts_.at(row); }
  int label(std::size_t row) const { return labels_.at(row); }
  const std::vector<int>& labels() const noexcept { return labels_; }

  /// Feature vector of one row (observed).
  std::span<const double> features(std::size_t row) const;
  /// Gathers the given rows into a dense batch (observed).
  Batch gather(std::span<const std::size_t> rows) const;
  Batch gather_all() const;

  /// Distinct ids in first-appearance order.
  std::vector<std::string> users() const;
  std::vector<std::string> contexts() const;
  std::vector<std::size_t> class_counts() const;

  LabeledDataset subset(std::span<const std::size_t> rows) const;
  LabeledDataset filter_users(const std::vector<std::string>& users) const;
  LabeledDataset filter_contexts(const std::vector<std::string>& contexts) const;
  /// Rows whose user is in `users` and whose context is in `contexts`.
  LabeledDataset filter(const std::vector<std::string>& users,
                        const std::vector<std::string>& contexts) const;

  void set_observer(AccessObserver observer);

  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b);

 private:
  void notify(std::size_t row) const;

  std::size_t dim_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<std::string> users_;
  std::vector<std::string> contexts_;
  std::vector<int> labels_;
  std::vector<double> features_;  // row-major, size() * dim_
  std::shared_ptr<const AccessObserver> observer_;
};

/// Reads `user_id,context_id,label,f0,...,f{D-1}`. Malformed values throw ParseError and a row
/// with the wrong field count throws StructuralError; both name the line.
LabeledDataset load_csv(const std::filesystem::path& path);
/// Writes the same schema with 17 significant digits, so load_csv(save_csv(d)) == d.
void save_csv(const LabeledDataset& data, const std::filesystem::path& path);

enum class Stratify {
  none,        ///< plain seeded shuffle
  label,       ///< per-class proportional allocation
  user_groups  ///< whole users assigned to one partition (person-disjoint)
};

/// Seeded, disjoint, exhaustive partition of row indices. `fractions` must sum to 1.
///
/// Under Stratify::label every partition with a nonzero fraction receives at least
/// one row of every class; a class with fewer rows than such partitions is a usage
/// error. Under Stratify::user_groups the same rule applies to distinct users.
std::vector<std::vector<std::size_t>> split(const LabeledDataset& data,
                                            std::span<const double> fractions,
                                            Stratify stratify,
                                            std::uint64_t seed);

}  // namespace crop
