// SPDX-License-Identifier: Apache-2.0
#include "crop/error.hpp"
#include "crop/pruning.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <tuple>

namespace crop {
namespace {

ModelParams single_row(std::vector<double> w) {
  Eigen::MatrixXd m(1, static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = w[i];
  return ModelParams({DenseLayer{m, Eigen::VectorXd::Constant(1, 0.25), Activation::identity}});
}

TEST(Prune, FourWeightExample) {
  const auto r = prune(single_row({0.5, -0.1, 0.3, -0.7}), 0.5, PruneStrategy::magnitude_low);
  const Eigen::RowVector4d want(0.5, 0.0, 0.0, -0.7);
  EXPECT_EQ(Eigen::RowVector4d(r.pruned.layer(0).weights), want);
  EXPECT_EQ(r.pruned.layer(0).bias(0), 0.25);
  EXPECT_EQ(r.mask.bits(), (std::vector<bool>{true, false, false, true}));
}

TEST(Prune, TopMagnitudeAndGradientScores) {
  const auto m = single_row({0.5, -0.1, 0.3, -0.7});
  EXPECT_EQ(prune(m, 0.5, PruneStrategy::magnitude_top).mask.bits(), (std::vector<bool>{false, true, true, false}));
  GradientSet g = GradientSet::zeros_like(m);
  g.weights[0] << 0.0, 5.0, -4.0, 0.1;
  EXPECT_EQ(prune(m, 0.5, PruneStrategy::gradient_low, &g).mask.bits(), (std::vector<bool>{false, true, true, false}));
  EXPECT_THROW(prune(m, 0.5, PruneStrategy::gradient_low), UsageError);
}

TEST(Prune, ZeroFractionIsNoOp) {
  const auto m = testing::random_model({5, 7, 3}, 2);
  const auto r = prune(m, 0.0, PruneStrategy::magnitude_low);
  EXPECT_EQ(r.pruned, m);
  EXPECT_EQ(r.mask, Mask::ones(m));
}

TEST(Prune, TiesFollowLayerRowColOrder) {
  const auto r = prune(single_row({1.0, 1.0, 1.0, 1.0}), 0.5, PruneStrategy::magnitude_low);
  EXPECT_EQ(r.mask.bits(), (std::vector<bool>{false, false, true, true}));
}

TEST(Prune, RejectsBadFraction) {
  const auto m = single_row({1.0});
  EXPECT_THROW(prune(m, -0.1, PruneStrategy::magnitude_low), UsageError);
  EXPECT_THROW(prune(m, 1.1, PruneStrategy::magnitude_low), UsageError);
}

using Key = std::tuple<double, std::size_t, Eigen::Index, Eigen::Index>;

std::vector<Key> ranked(const ModelParams& m) {
  std::vector<Key> all;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const auto& w = m.layer(l).weights;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) all.emplace_back(std::abs(w(r, c)), l, r, c);
    }
  }
  std::sort(all.begin(), all.end());
  return all;
}

TEST(Prune, AgreesWithBruteForceRanking) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const auto m = testing::random_model(testing::random_dims(rng), rng());
    const double p = trial == 0 ? 0.3 : std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto r = prune(m, p, PruneStrategy::magnitude_low);
    const auto all = ranked(m);
    const auto n = static_cast<std::size_t>(std::floor(p * static_cast<double>(all.size()) + 1e-9));
    Mask want = Mask::ones(m);
    for (std::size_t i = 0; i < n; ++i) want.layer(std::get<1>(all[i]))(std::get<2>(all[i]), std::get<3>(all[i])) = 0;
    EXPECT_EQ(r.mask, want);
    EXPECT_EQ(r.mask.zero_count(), n);
    EXPECT_EQ(r.mask.prune_fraction(), static_cast<double>(n) / static_cast<double>(all.size()));
  }
}

TEST(Prune, PureAndMonotone) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 25; ++trial) {
    const auto m = testing::random_model(testing::random_dims(rng), rng());
    const ModelParams copy = m;
    double p1 = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double p2 = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (p1 > p2) std::swap(p1, p2);
    const auto a = prune(m, p1, PruneStrategy::magnitude_low).mask.bits();
    const auto b = prune(m, p2, PruneStrategy::magnitude_low).mask.bits();
    EXPECT_EQ(m, copy);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i]) EXPECT_FALSE(b[i]);
    }
  }
}

TEST(Prune, CountIsFloorOfFractionTimesTotal) {
  EXPECT_EQ(prune_count(0.15, 100), 15u);  // grid values carry representation error
  EXPECT_EQ(prune_count(0.05 * 3, 20), 3u);
  EXPECT_EQ(prune_count(0.999, 10), 9u);
  EXPECT_EQ(prune_count(1.0, 7), 7u);
}

TEST(MaskOf, AllNonzeroIsAllOnes) {
  const auto m = testing::random_model({4, 3, 2}, 5);
  EXPECT_EQ(mask_of(m), Mask::ones(m));
}

TEST(MaskOf, RecoversPruneMask) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = testing::random_model(testing::random_dims(rng), rng());
    const auto r = prune(m, 0.05 * static_cast<double>(trial), PruneStrategy::magnitude_low);
    EXPECT_EQ(mask_of(r.pruned), r.mask);
  }
}

TEST(Mask, BitsRoundTripAndFraction) {
  const auto m = testing::random_model({3, 4, 2}, 1);
  std::vector<bool> bits(m.weight_count());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = i % 3 != 0;
  const Mask mask = Mask::from_bits(m, bits);
  EXPECT_EQ(mask.bits(), bits);
  EXPECT_EQ(mask.zero_count(), 7u);
  EXPECT_EQ(mask.prune_fraction(), 7.0 / 20.0);
  EXPECT_TRUE(mask.congruent(m));
  EXPECT_FALSE(mask.congruent(testing::random_model({3, 5, 2}, 1)));
}

TEST(PruneConfig, GridAndValidation) {
  PruneConfig c;
  const auto g = c.grid();
  ASSERT_EQ(g.size(), 20u);
  EXPECT_DOUBLE_EQ(g.front(), 0.05);
  EXPECT_EQ(g.back(), 1.0);
  c.k = 0.3;
  c.k_step = 0.3;
  EXPECT_EQ(c.grid().size(), 3u);
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), UsageError);
  c = PruneConfig{};
  c.k_step = -0.1;
  EXPECT_THROW(c.validate(), UsageError);
}

ModelParams trained_blob_model(std::uint64_t seed, const LabeledDataset& data) {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.05;
  cfg.seed = seed;
  return train(ModelParams::random(std::vector<std::size_t>{4, 12, 2}, seed), data, cfg).best;
}

TEST(ToleratedPrune, FullToleranceReachesGridEnd) {
  const auto data = testing::blobs(30, 4, 0.6, 2);
  const auto m = trained_blob_model(1, data);
  PruneConfig c;
  c.tau = 1.0;
  const auto r = tolerated_prune(m, c, data, MetricKind::accuracy);
  EXPECT_EQ(r.fraction, 1.0);
  EXPECT_EQ(r.mask.zero_count(), m.weight_count());
}

TEST(ToleratedPrune, ConstantAccuracyModelReachesGridEnd) {
  ModelParams m = ModelParams::zeros(std::vector<std::size_t>{4, 6, 2});
  m.layer(1).bias(1) = 1.0;
  m.layer(0).weights(0, 0) = 0.5;  // feeds nothing: the next layer's weights are zero
  const auto data = testing::blobs(10, 4, 1.0, 3);
  PruneConfig c;
  c.tau = 0.01;
  const auto r = tolerated_prune(m, c, data, MetricKind::accuracy);
  EXPECT_EQ(r.fraction, 1.0);
  EXPECT_EQ(r.metric, r.baseline_metric);
}

TEST(ToleratedPrune, FirstStepFailureReturnsUnprunedModel) {
  const auto data = testing::blobs(30, 1, 1.0, 4, "c0", 0.2);
  Eigen::MatrixXd w(2, 1);
  w << -1.0, 1.0;
  const ModelParams model({DenseLayer{w, Eigen::VectorXd::Zero(2), Activation::identity}});
  PruneConfig c;
  c.tau = 0.01;
  c.k = 1.0;
  c.k_step = 1.0;
  const auto r = tolerated_prune(model, c, data, MetricKind::accuracy);
  EXPECT_EQ(r.fraction, 0.0);
  EXPECT_EQ(r.pruned, model);
  EXPECT_EQ(r.mask, Mask::ones(model));
  ASSERT_EQ(r.trace.size(), 1u);
}

TEST(ToleratedPrune, ContractHoldsUnderReevaluation) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto data = testing::blobs(40, 4, 0.5, seed + 10, "c0", 0.8);
    const auto m = trained_blob_model(seed, data);
    PruneConfig c;
    c.tau = 0.01;
    const auto r = tolerated_prune(m, c, data, MetricKind::accuracy);
    const double a0 = testing::accuracy_of(m, data);
    EXPECT_EQ(r.baseline_metric, a0);
    EXPECT_GE(testing::accuracy_of(r.pruned, data), a0 - 0.01);
    EXPECT_EQ(r.mask.zero_count(), prune_count(r.fraction, m.weight_count()));
    const double next = r.fraction == 0.0 ? c.k : r.fraction + c.k_step;
    if (next <= 1.0 + 1e-9) {
      const auto further = prune(m, std::min(next, 1.0), PruneStrategy::magnitude_low);
      EXPECT_LT(testing::accuracy_of(further.pruned, data), a0 - 0.01) << "seed " << seed;
    }
  }
}

TEST(ToleratedPrune, ToleranceContractOnRandomModels) {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dims = testing::random_dims(rng, 3, 8);
    const auto m = testing::random_model(dims, rng());
    const auto data = testing::random_dataset(40, dims.front(), dims.back(), rng());
    PruneConfig c;
    c.tau = 0.02 + 0.1 * static_cast<double>(trial % 4);
    c.k = 0.1;
    c.k_step = 0.1;
    const auto r = tolerated_prune(m, c, data, MetricKind::accuracy);
    EXPECT_GE(r.metric, r.baseline_metric - c.tau);
    EXPECT_EQ(r.metric, testing::accuracy_of(r.pruned, data));
  }
}

TEST(ToleratedPrune, EmptyDataIsUsageError) {
  const auto m = testing::random_model({2, 2}, 1);
  EXPECT_THROW(tolerated_prune(m, PruneConfig{}, LabeledDataset(2, 2), MetricKind::accuracy), UsageError);
}

TEST(PruneStrategy, NamesRoundTrip) {
  for (auto s : {PruneStrategy::magnitude_low, PruneStrategy::magnitude_top, PruneStrategy::gradient_low}) {
    EXPECT_EQ(strategy_from_string(to_string(s)), s);
  }
  EXPECT_THROW(strategy_from_string("random"), UsageError);
}

}  // namespace
}  // namespace crop
