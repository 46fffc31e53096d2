// SPDX-License-Identifier: Apache-2.0
// Shared generators and independent reference implementations for the tests.
#pragma once

#include "crop/dataset.hpp"
#include "crop/nn.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace crop::testing {

/// Model with N(0, scale^2) weights and biases.
inline ModelParams random_model(const std::vector<std::size_t>& dims, std::uint64_t seed, double scale = 0.7) {
  ModelParams m = ModelParams::zeros(dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < m.num_layers(); ++i) {
    auto& l = m.layer(i);
    for (Eigen::Index k = 0; k < l.weights.size(); ++k) l.weights.data()[k] = n(rng);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = n(rng);
  }
  return m;
}

/// Random dims: input 1..max_width, 0..max_hidden hidden layers, 2..4 classes.
inline std::vector<std::size_t> random_dims(std::mt19937_64& rng, std::size_t max_layers = 3,
                                            std::size_t max_width = 16) {
  std::uniform_int_distribution<std::size_t> width(1, max_width), layers(1, max_layers), classes(2, 4);
  std::vector<std::size_t> dims{width(rng)};
  const std::size_t n = layers(rng);
  for (std::size_t i = 0; i + 1 < n; ++i) dims.push_back(width(rng));
  dims.push_back(classes(rng));
  return dims;
}

/// Gaussian features, uniform labels; every class appears at least twice when n >= 2k.
inline LabeledDataset random_dataset(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed,
                                     const std::vector<std::string>& users = {"u0"},
                                     const std::vector<std::string>& contexts = {"c0"}) {
  LabeledDataset d(dim, classes);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> f(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_user(0, users.size() - 1), pick_ctx(0, contexts.size() - 1);
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = f(rng);
    d.add_row(users[pick_user(rng)], contexts[pick_ctx(rng)], static_cast<int>(i % classes), x);
  }
  return d;
}

/// Two Gaussian blobs at +/- `offset` along every axis.
inline LabeledDataset blobs(std::size_t per_class, std::size_t dim, double offset, std::uint64_t seed,
                            const std::string& context = "c0", double sigma = 0.5) {
  LabeledDataset d(dim, 2);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    for (auto& v : x) v = (label == 0 ? -offset : offset) + noise(rng);
    d.add_row("u0", context, label, x);
  }
  return d;
}

/// Straight-line evaluation of the affine chain with plain loops.
inline std::vector<double> naive_forward(const ModelParams& m, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (std::size_t li = 0; li < m.num_layers(); ++li) {
    const auto& l = m.layer(li);
    std::vector<double> z(static_cast<std::size_t>(l.weights.rows()));
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      double s = l.bias(r);
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) s += l.weights(r, c) * h[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = (li + 1 < m.num_layers() && s < 0.0) ? 0.0 : s;
    }
    h = std::move(z);
  }
  return h;
}

/// Mean cross-entropy with plain loops over naive_forward.
inline double naive_cross_entropy(const ModelParams& m, const LabeledDataset& d) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto f = d.features(i);
    const auto z = naive_forward(m, std::vector<double>(f.begin(), f.end()));
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    total += mx + std::log(s) - z[static_cast<std::size_t>(d.label(i))];
  }
  return total / static_cast<double>(d.size());
}

inline double accuracy_of(const ModelParams& m, const LabeledDataset& d) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto f = d.features(i);
    const auto z = naive_forward(m, std::vector<double>(f.begin(), f.end()));
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c) {
      if (z[c] > z[best]) best = c;
    }
    if (static_cast<int>(best) == d.label(i)) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("crop_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace crop::testing
