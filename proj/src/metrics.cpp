// SPDX-License-Identifier: Apache-2.0
#include "crop/metrics.hpp"

#include "crop/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace crop {

std::vector<int> predict(const ModelParams& model, const LabeledDataset& data) {
  if (data.empty()) return {};
  const Batch b = data.gather_all();
  const Eigen::MatrixXd logits = forward_batch(model, b.x);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, arg)) arg = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

Evaluation score_predictions(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes,
                             MetricKind kind) {
  if (truth.empty()) throw UsageError("cannot evaluate on empty data");
  if (truth.size() != predicted.size()) throw StructuralError("prediction count differs from label count");
  Evaluation ev;
  switch (kind) {
    case MetricKind::accuracy: {
      std::size_t correct = 0;
      for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == predicted[i] ? 1 : 0;
      ev.value = static_cast<double>(correct) / static_cast<double>(truth.size());
      break;
    }
    case MetricKind::balanced_accuracy: {
      std::vector<std::size_t> support(num_classes, 0);
      std::vector<std::size_t> hits(num_classes, 0);
      for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto y = static_cast<std::size_t>(truth[i]);
        if (y >= num_classes) throw UsageError("label outside class range");
        ++support[y];
        hits[y] += truth[i] == predicted[i] ? 1 : 0;
      }
      double sum = 0.0;
      std::size_t present = 0;
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (support[c] == 0) {
          ev.warnings.push_back("class " + std::to_string(c) + " absent; excluded from balanced accuracy");
          continue;
        }
        sum += static_cast<double>(hits[c]) / static_cast<double>(support[c]);
        ++present;
      }
      ev.value = sum / static_cast<double>(present);
      break;
    }
    case MetricKind::f1_binary: {
      if (num_classes != 2) throw UsageError("f1_binary requires exactly 2 classes");
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        if (predicted[i] == 1 && truth[i] == 1) ++tp;
        if (predicted[i] == 1 && truth[i] != 1) ++fp;
        if (predicted[i] != 1 && truth[i] == 1) ++fn;
      }
      const std::size_t denom = 2 * tp + fp + fn;
      // No positives predicted or present: nothing was got wrong.
      ev.value = denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
      break;
    }
  }
  return ev;
}

Evaluation evaluate_detailed(const ModelParams& model, const LabeledDataset& data, MetricKind kind) {
  if (data.empty()) throw UsageError("cannot evaluate on empty data");
  const auto predicted = predict(model, data);
  return score_predictions(data.labels(), predicted, std::max(data.num_classes(), model.output_dim()), kind);
}

double evaluate(const ModelParams& model, const LabeledDataset& data, MetricKind kind) {
  return evaluate_detailed(model, data, kind).value;
}

// ---------------------------------------------------------------------------
// Δ scores

DeltaResult delta_score(std::span<const UserComparison> users) {
  if (users.empty()) throw UsageError("no users to score");
  DeltaResult out;
  double total = 0.0;
  for (const auto& u : users) {
    if (u.target.empty()) throw UsageError("user " + u.user + " has no context scores");
    if (u.target.size() != u.reference.size()) {
      throw UsageError("user " + u.user + ": context sets differ between models");
    }
    double sum = 0.0;
    for (const auto& [ctx, value] : u.target) {
      const auto it = u.reference.find(ctx);
      if (it == u.reference.end()) throw UsageError("user " + u.user + ": reference lacks context " + ctx);
      sum += 100.0 * (value - it->second);
    }
    out.per_user.emplace_back(u.user, sum);
    total += sum;
  }
  out.mean = total / static_cast<double>(users.size());
  return out;
}

DeltaResult delta_p(std::span<const UserComparison> users) { return delta_score(users); }

DeltaResult delta_g(std::span<const UserComparison> users) { return delta_score(users); }

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

// ---------------------------------------------------------------------------
// EvalReport

void EvalReport::add(EvalRecord record) {
  auto key = std::make_tuple(record.user, record.seed, record.state, record.context);
  if (index_.count(key)) {
    throw UsageError("duplicate report entry for " + record.user + "/" + record.state + "/" + record.context);
  }
  index_.emplace(std::move(key), records_.size());
  records_.push_back(std::move(record));
}

std::optional<double> EvalReport::value(const std::string& user, std::uint64_t seed, const std::string& state,
                                        const std::string& context) const {
  const auto it = index_.find(std::make_tuple(user, seed, state, context));
  if (it == index_.end()) return std::nullopt;
  return records_[it->second].value;
}

namespace {

template <typename T, typename F>
std::vector<T> distinct(const std::vector<EvalRecord>& records, F field) {
  std::vector<T> out;
  std::set<T> seen;
  for (const auto& r : records) {
    if (seen.insert(field(r)).second) out.push_back(field(r));
  }
  return out;
}

}  // namespace

std::vector<std::string> EvalReport::users() const {
  return distinct<std::string>(records_, [](const EvalRecord& r) { return r.user; });
}
std::vector<std::uint64_t> EvalReport::seeds() const {
  return distinct<std::uint64_t>(records_, [](const EvalRecord& r) { return r.seed; });
}
std::vector<std::string> EvalReport::states() const {
  return distinct<std::string>(records_, [](const EvalRecord& r) { return r.state; });
}
std::vector<std::string> EvalReport::contexts() const {
  return distinct<std::string>(records_, [](const EvalRecord& r) { return r.context; });
}

DeltaResult EvalReport::delta(const std::string& target, const std::string& reference, std::uint64_t seed) const {
  std::vector<UserComparison> rows;
  for (const auto& user : users()) {
    UserComparison cmp{user, {}, {}};
    for (const auto& r : records_) {
      if (r.user != user || r.seed != seed) continue;
      if (r.state == target) cmp.target[r.context] = r.value;
      if (r.state == reference) cmp.reference[r.context] = r.value;
    }
    if (cmp.target.empty() && cmp.reference.empty()) continue;
    if (cmp.target.empty() || cmp.reference.empty()) {
      throw UsageError("user " + user + " seed " + std::to_string(seed) + " lacks state " +
                       (cmp.target.empty() ? target : reference));
    }
    rows.push_back(std::move(cmp));
  }
  return delta_score(rows);
}

std::vector<SummaryRow> EvalReport::summary(const std::string& target, const std::string& generic,
                                            const std::string& conventional) const {
  const auto user_ids = users();
  const auto seed_ids = seeds();
  std::map<std::string, std::vector<double>> dp, dg;
  std::vector<double> dp_mean, dg_mean;
  for (auto seed : seed_ids) {
    const DeltaResult p = delta(target, generic, seed);
    const DeltaResult g = delta(target, conventional, seed);
    for (const auto& [u, v] : p.per_user) dp[u].push_back(v);
    for (const auto& [u, v] : g.per_user) dg[u].push_back(v);
    dp_mean.push_back(p.mean);
    dg_mean.push_back(g.mean);
  }
  std::vector<SummaryRow> rows;
  for (const auto& u : user_ids) rows.push_back({u, mean_std(dp[u]), mean_std(dg[u])});
  rows.push_back({"mean", mean_std(dp_mean), mean_std(dg_mean)});
  return rows;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, p);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << "user,seed,state,context,metric_value\n";
  for (const auto& r : records_) {
    out << r.user << ',' << r.seed << ',' << r.state << ',' << r.context << ',' << format_double(r.value) << '\n';
  }
}

EvalReport EvalReport::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "user,seed,state,context,metric_value") {
    throw ParseError(1, "unexpected report header");
  }
  EvalReport report;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != 5) throw ParseError(line_no, "expected 5 fields");
    EvalRecord r;
    r.user = f[0];
    r.state = f[2];
    r.context = f[3];
    auto [sp, sec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), r.seed);
    auto [vp, vec] = std::from_chars(f[4].data(), f[4].data() + f[4].size(), r.value);
    if (sec != std::errc{} || vec != std::errc{}) throw ParseError(line_no, "invalid number");
    report.add(std::move(r));
  }
  return report;
}

void EvalReport::write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << "user,delta_p_mean,delta_p_std,delta_g_mean,delta_g_std\n";
  for (const auto& r : rows) {
    out << r.user << ',' << format_double(r.delta_p.mean) << ',' << format_double(r.delta_p.std) << ','
        << format_double(r.delta_g.mean) << ',' << format_double(r.delta_g.std) << '\n';
  }
}

const char* to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::balanced_accuracy: return "balanced_accuracy";
    case MetricKind::f1_binary: return "f1_binary";
  }
  return "accuracy";
}

MetricKind metric_from_string(const std::string& name) {
  if (name == "accuracy") return MetricKind::accuracy;
  if (name == "balanced_accuracy") return MetricKind::balanced_accuracy;
  if (name == "f1_binary") return MetricKind::f1_binary;
  throw UsageError("unknown metric '" + name + "'");
}

}  // namespace crop
