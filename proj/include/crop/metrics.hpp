// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/dataset.hpp"
#include "crop/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <tuple>
#include <string>
#include <vector>

namespace crop {

enum class MetricKind { accuracy, balanced_accuracy, f1_binary };

struct Evaluation {
  double value = 0.0;
  /// Classes skipped by balanced_accuracy because they have no rows.
  std::vector<std::string> warnings;
};

/// Argmax class per row; ties resolve to the lowest class index.
std::vector<int> predict(const ModelParams& model, const LabeledDataset& data);

/// Value in [0,1]. f1_binary treats class 1 as positive and requires a 2-class model.
double evaluate(const ModelParams& model, const LabeledDataset& data, MetricKind kind);
Evaluation evaluate_detailed(const ModelParams& model, const LabeledDataset& data, MetricKind kind);
/// Same metric from precomputed predictions.
Evaluation score_predictions(std::span<const int> truth, std::span<const int> predicted,
                             std::size_t num_classes, MetricKind kind);

/// context id -> metric value as a fraction in [0,1].
using ContextScores = std::map<std::string, double>;

struct UserComparison {
  std::string user;
  ContextScores target;     ///< e.g. the CRoP model
  ContextScores reference;  ///< generic (delta_p) or conventional (delta_g)
};

struct DeltaResult {
  std::vector<std::pair<std::string, double>> per_user;  ///< summed context gains, percent points
  double mean = 0.0;                                     ///< average over users
};

/// Sum over contexts of 100 * (target - reference), averaged over users. Every
/// user must report the same context set for both models.
DeltaResult delta_score(std::span<const UserComparison> users);
/// Personalization gain: target = personalized, reference = generic.
DeltaResult delta_p(std::span<const UserComparison> users);
/// Generalization gain: target = personalized, reference = conventionally finetuned.
DeltaResult delta_g(std::span<const UserComparison> users);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation (n - 1); 0 for a single value
};
MeanStd mean_std(std::span<const double> values);

struct EvalRecord {
  std::string user;
  std::uint64_t seed = 0;
  std::string state;
  std::string context;
  double value = 0.0;
};

/// Per-user Δ statistics over seeds.
struct SummaryRow {
  std::string user;  ///< a user id, or "mean" for the user-averaged row
  MeanStd delta_p;
  MeanStd delta_g;
};

/// Raw metric values per (user, seed, state, context) plus derived Δ scores.
class EvalReport {
 public:
  void add(EvalRecord record);
  const std::vector<EvalRecord>& records() const noexcept { return records_; }

  std::optional<double> value(const std::string& user, std::uint64_t seed, const std::string& state,
                              const std::string& context) const;

  std::vector<std::string> users() const;
  std::vector<std::uint64_t> seeds() const;
  std::vector<std::string> states() const;
  std::vector<std::string> contexts() const;

  /// Δ of `target` over `reference` for one seed, across all users.
  DeltaResult delta(const std::string& target, const std::string& reference, std::uint64_t seed) const;

  /// One row per user (Δ per seed, then mean ± std over seeds) and a final "mean"
  /// row (user-averaged Δ per seed, then mean ± std over seeds).
  std::vector<SummaryRow> summary(const std::string& target = "crop",
                                  const std::string& generic = "generic",
                                  const std::string& conventional = "conventional") const;

  /// Columns: user,seed,state,context,metric_value
  void write_csv(const std::filesystem::path& path) const;
  static EvalReport read_csv(const std::filesystem::path& path);
  /// Columns: user,delta_p_mean,delta_p_std,delta_g_mean,delta_g_std
  static void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);

 private:
  std::vector<EvalRecord> records_;
  std::map<std::tuple<std::string, std::uint64_t, std::string, std::string>, std::size_t> index_;
};

const char* to_string(MetricKind kind);
MetricKind metric_from_string(const std::string& name);

}  // namespace crop
