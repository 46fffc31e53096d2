// SPDX-License-Identifier: Apache-2.0
#include "crop/dataset.hpp"

#include "crop/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string_view>
#include <unordered_set>

namespace crop {

LabeledDataset::LabeledDataset(std::size_t feature_dim, std::size_t num_classes)
    : dim_(feature_dim), num_classes_(num_classes) {}

void LabeledDataset::add_row(std::string user, std::string context, int label,
                             std::span<const double> features) {
  if (features.size() != dim_) {
    throw StructuralError("row has " + std::to_string(features.size()) + " features, expected " +
                          std::to_string(dim_));
  }
  if (label < 0) throw UsageError("negative label " + std::to_string(label));
  for (double v : features) {
    if (!std::isfinite(v)) throw NumericError("non-finite feature value");
  }
  users_.push_back(std::move(user));
  contexts_.push_back(std::move(context));
  labels_.push_back(label);
  features_.insert(features_.end(), features.begin(), features.end());
  num_classes_ = std::max(num_classes_, static_cast<std::size_t>(label) + 1);
}

void LabeledDataset::set_num_classes(std::size_t k) {
  if (k < num_classes_) {
    throw UsageError("cannot shrink class count below " + std::to_string(num_classes_));
  }
  num_classes_ = k;
}

std::span<const double> LabeledDataset::features(std::size_t row) const {
  if (row >= size()) throw UsageError("row index out of range");
  notify(row);
  return {features_.data() + row * dim_, dim_};
}

Batch LabeledDataset::gather(std::span<const std::size_t> rows) const {
  Batch batch;
  batch.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim_));
  batch.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= size()) throw UsageError("row index out of range");
    notify(r);
    for (std::size_t j = 0; j < dim_; ++j) {
      batch.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = features_[r * dim_ + j];
    }
    batch.y.push_back(labels_[r]);
  }
  return batch;
}

Batch LabeledDataset::gather_all() const {
  std::vector<std::size_t> rows(size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return gather(rows);
}

namespace {

std::vector<std::string> distinct_in_order(const std::vector<std::string>& values) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& v : values) {
    if (seen.insert(v).second) out.push_back(v);
  }
  return out;
}

}  // namespace

std::vector<std::string> LabeledDataset::users() const { return distinct_in_order(users_); }

std::vector<std::string> LabeledDataset::contexts() const { return distinct_in_order(contexts_); }

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes_, 0);
  for (int y : labels_) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out(dim_, num_classes_);
  out.observer_ = observer_;
  out.users_.reserve(rows.size());
  out.contexts_.reserve(rows.size());
  out.labels_.reserve(rows.size());
  out.features_.reserve(rows.size() * dim_);
  for (std::size_t r : rows) {
    if (r >= size()) throw UsageError("row index out of range");
    out.users_.push_back(users_[r]);
    out.contexts_.push_back(contexts_[r]);
    out.labels_.push_back(labels_[r]);
    out.features_.insert(out.features_.end(), features_.begin() + static_cast<std::ptrdiff_t>(r * dim_),
                         features_.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim_));
  }
  return out;
}

LabeledDataset LabeledDataset::filter_users(const std::vector<std::string>& users) const {
  const std::set<std::string> keep(users.begin(), users.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (keep.count(users_[i])) rows.push_back(i);
  }
  return subset(rows);
}

LabeledDataset LabeledDataset::filter_contexts(const std::vector<std::string>& contexts) const {
  const std::set<std::string> keep(contexts.begin(), contexts.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (keep.count(contexts_[i])) rows.push_back(i);
  }
  return subset(rows);
}

LabeledDataset LabeledDataset::filter(const std::vector<std::string>& users,
                                      const std::vector<std::string>& contexts) const {
  const std::set<std::string> keep_users(users.begin(), users.end());
  const std::set<std::string> keep_contexts(contexts.begin(), contexts.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (keep_users.count(users_[i]) && keep_contexts.count(contexts_[i])) rows.push_back(i);
  }
  return subset(rows);
}

void LabeledDataset::set_observer(AccessObserver observer) {
  observer_ = observer ? std::make_shared<const AccessObserver>(std::move(observer)) : nullptr;
}

void LabeledDataset::notify(std::size_t row) const {
  if (observer_) (*observer_)(users_[row], contexts_[row]);
}

bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
  return a.dim_ == b.dim_ && a.num_classes_ == b.num_classes_ && a.users_ == b.users_ &&
         a.contexts_ == b.contexts_ && a.labels_ == b.labels_ && a.features_ == b.features_;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

}  // namespace

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  auto header = split_fields(trim(line));
  if (header.size() < 4 || trim(header[0]) != "user_id" || trim(header[1]) != "context_id" ||
      trim(header[2]) != "label") {
    throw ParseError(1, "header must be user_id,context_id,label,f0,...");
  }
  const std::size_t dim = header.size() - 3;
  for (std::size_t j = 0; j < dim; ++j) {
    if (trim(header[j + 3]) != "f" + std::to_string(j)) {
      throw ParseError(1, "expected feature column f" + std::to_string(j));
    }
  }

  LabeledDataset data(dim);
  std::vector<double> features(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    auto fields = split_fields(row);
    if (fields.size() != dim + 3) {
      throw StructuralError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 3) +
                            " fields, got " + std::to_string(fields.size()));
    }
    int label = 0;
    const auto lf = trim(fields[2]);
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (lec != std::errc{} || lp != lf.data() + lf.size() || label < 0) {
      throw ParseError(line_no, "invalid label '" + std::string(lf) + "'");
    }
    for (std::size_t j = 0; j < dim; ++j) {
      const auto f = trim(fields[j + 3]);
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), features[j]);
      if (ec != std::errc{} || p != f.data() + f.size() || !std::isfinite(features[j])) {
        throw ParseError(line_no, "non-numeric feature f" + std::to_string(j) + " '" +
                                      std::string(f) + "'");
      }
    }
    data.add_row(std::string(trim(fields[0])), std::string(trim(fields[1])), label, features);
  }
  return data;
}

void save_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << "user_id,context_id,label";
  for (std::size_t j = 0; j < data.feature_dim(); ++j) out << ",f" << j;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.user(i) << ',' << data.context(i) << ',' << data.label(i);
    for (double v : data.features(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

// Largest-remainder allocation of n items over fractions; ties go to the lower index.
std::vector<std::size_t> allocate(std::size_t n, std::span<const double> fractions, bool min_one) {
  std::vector<std::size_t> counts(fractions.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    const double exact = fractions[p] * static_cast<double>(n);
    counts[p] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[p];
    remainders.emplace_back(exact - static_cast<double>(counts[p]), p);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];
  while (assigned > n) {  // only reachable through the 1e-9 slack
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  // Every partition with a nonzero fraction gets at least one item.
  for (std::size_t p = 0; min_one && p < fractions.size(); ++p) {
    if (fractions[p] > 0.0 && counts[p] == 0) {
      auto donor = std::max_element(counts.begin(), counts.end());
      --*donor;
      ++counts[p];
    }
  }
  return counts;
}

void check_fractions(std::span<const double> fractions) {
  if (fractions.empty()) throw UsageError("split needs at least one fraction");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw UsageError("split fractions must lie in [0,1]");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("split fractions must sum to 1");
}

}  // namespace

std::vector<std::vector<std::size_t>> split(const LabeledDataset& data,
                                            std::span<const double> fractions, Stratify stratify,
                                            std::uint64_t seed) {
  check_fractions(fractions);
  const auto nonzero = static_cast<std::size_t>(
      std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0.0; }));
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> parts(fractions.size());

  // Groups of rows that are allocated together or proportionally.
  std::map<std::string, std::vector<std::size_t>> groups;
  switch (stratify) {
    case Stratify::none:
      for (std::size_t i = 0; i < data.size(); ++i) groups[""].push_back(i);
      break;
    case Stratify::label:
      for (std::size_t i = 0; i < data.size(); ++i) {
        groups[std::to_string(data.label(i))].push_back(i);
      }
      break;
    case Stratify::user_groups: {
      auto users = data.users();
      if (users.size() < nonzero) {
        throw UsageError("too few users (" + std::to_string(users.size()) + ") to split into " +
                         std::to_string(nonzero) + " partitions");
      }
      std::shuffle(users.begin(), users.end(), rng);
      const auto counts = allocate(users.size(), fractions, true);
      std::map<std::string, std::size_t> part_of;
      std::size_t u = 0;
      for (std::size_t p = 0; p < counts.size(); ++p) {
        for (std::size_t c = 0; c < counts[p]; ++c) part_of[users[u++]] = p;
      }
      for (std::size_t i = 0; i < data.size(); ++i) parts[part_of.at(data.user(i))].push_back(i);
      return parts;
    }
  }

  // std::map iterates labels in a fixed order, so the RNG stream is reproducible.
  for (auto& [key, rows] : groups) {
    if (stratify == Stratify::label && rows.size() < nonzero) {
      throw UsageError("class " + key + " has " + std::to_string(rows.size()) +
                       " rows; cannot stratify into " + std::to_string(nonzero) + " partitions");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto counts = allocate(rows.size(), fractions, stratify == Stratify::label);
    std::size_t r = 0;
    for (std::size_t p = 0; p < counts.size(); ++p) {
      for (std::size_t c = 0; c < counts[p]; ++c) parts[p].push_back(rows[r++]);
    }
  }
  for (auto& part : parts) std::sort(part.begin(), part.end());
  return parts;
}

}  // namespace crop
