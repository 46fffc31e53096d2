// SPDX-License-Identifier: Apache-2.0
#include "crop/error.hpp"
#include "crop/experiment.hpp"
#include "crop/pipeline.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace crop {
namespace {

Mask random_mask(const ModelParams& m, std::mt19937_64& rng) {
  std::vector<bool> bits(m.weight_count());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = rng() % 2 == 0;
  return Mask::from_bits(m, bits);
}

TEST(Mix, AllOnesKeepsPruned) {
  const auto p = testing::random_model({3, 5, 2}, 1);
  const auto g = testing::random_model({3, 5, 2}, 2);
  EXPECT_EQ(mix(p, g, Mask::ones(p)), p);
}

TEST(Mix, AllZerosTakesGenericWeightsAndPrunedBiases) {
  const auto p = testing::random_model({3, 5, 2}, 1);
  const auto g = testing::random_model({3, 5, 2}, 2);
  const auto out = mix(p, g, Mask::zeros(p));
  for (std::size_t l = 0; l < out.num_layers(); ++l) {
    EXPECT_EQ(out.layer(l).weights, g.layer(l).weights);
    EXPECT_EQ(out.layer(l).bias, p.layer(l).bias);
  }
}

TEST(Mix, EntrywiseOracleOnRandomTriples) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto dims = testing::random_dims(rng);
    const auto p = testing::random_model(dims, rng());
    const auto g = testing::random_model(dims, rng());
    const auto mask = random_mask(p, rng);
    const ModelParams p_copy = p, g_copy = g;
    const auto out = mix(p, g, mask);
    const auto bits = mask.bits();
    std::size_t i = 0;
    for (std::size_t l = 0; l < out.num_layers(); ++l) {
      const auto& w = out.layer(l).weights;
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c, ++i) {
          EXPECT_EQ(w(r, c), bits[i] ? p.layer(l).weights(r, c) : g.layer(l).weights(r, c));
        }
      }
    }
    EXPECT_EQ(p, p_copy);
    EXPECT_EQ(g, g_copy);
  }
}

TEST(Mix, ShapeMismatchIsStructural) {
  const auto p = testing::random_model({3, 5, 2}, 1);
  const auto g = testing::random_model({3, 4, 2}, 2);
  EXPECT_THROW(mix(p, g, Mask::ones(p)), StructuralError);
  EXPECT_THROW(mix(p, p, Mask::ones(g)), StructuralError);
}

// One personal user of the desk profile, with its generic model.
struct Bench {
  Experiment ex;
  ModelParams generic;
  UserSplit split;
};

const Bench& bench() {
  static const Bench b = [] {
    ExperimentConfig cfg = desk_scale_profile();
    Experiment ex = resolve_experiment(cfg);
    ModelParams g = train_generic(ex, 1).best;
    UserSplit s = split_user(ex, ex.personal_users.front(), 1);
    return Bench{std::move(ex), std::move(g), std::move(s)};
  }();
  return b;
}

TEST(Conventional, ZeroEpochsReturnsGeneric) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(conventional_finetune(bench().generic, bench().split.available, cfg), bench().generic);
}

TEST(Conventional, IgnoresPenaltySettings) {
  TrainConfig cfg = bench().ex.cfg.conventional;
  cfg.epochs = 5;
  TrainConfig penalized = cfg;
  penalized.alpha = 0.5;
  penalized.regularizer = Regularizer::l1;
  EXPECT_EQ(conventional_finetune(bench().generic, bench().split.available, cfg),
            conventional_finetune(bench().generic, bench().split.available, penalized));
}

TEST(Conventional, RaisesAvailableContextAccuracyAndIsDeterministic) {
  const auto& b = bench();
  const TrainConfig cfg = conventional_config(b.ex.cfg, derive_run_seeds(1, b.split.user));
  const auto tuned = conventional_finetune(b.generic, b.split.available, cfg);
  EXPECT_EQ(tuned, conventional_finetune(b.generic, b.split.available, cfg));
  const auto before = score_contexts(b.generic, b.split, MetricKind::accuracy);
  const auto after = score_contexts(tuned, b.split, MetricKind::accuracy);
  EXPECT_GT(after.at("c0"), before.at("c0"));
}

CropConfig small_crop() {
  CropConfig c;
  c.train_initial.epochs = 15;
  c.train_initial.learning_rate = 0.02;
  c.train_initial.alpha = 1e-3;
  c.train_initial.regularizer = Regularizer::l1;
  c.train_initial.seed = 5;
  c.train_final = c.train_initial;
  c.train_final.learning_rate = 0.005;
  c.train_final.epochs = 10;
  return c;
}

TEST(CropPersonalize, StagesAreCongruentAndMixingIdentityHolds) {
  const auto& b = bench();
  const auto r = crop_personalize(b.generic, b.split.available, small_crop());
  ASSERT_TRUE(r.stages.has_value());
  const auto& s = *r.stages;
  for (const ModelParams* m : {&s.finetuned, &s.pruned, &s.mixed, &s.final}) EXPECT_TRUE(m->congruent(b.generic));
  EXPECT_EQ(s.generic, b.generic);
  EXPECT_EQ(s.final, r.final);
  EXPECT_EQ(mix(s.pruned, b.generic, r.mask), s.mixed);
  EXPECT_GE(mask_of(s.pruned).zero_count(), r.mask.zero_count());
  EXPECT_EQ(r.mask.zero_count(), prune_count(r.prune_fraction, b.generic.weight_count()));
  ASSERT_EQ(r.histories.size(), 2u);
  EXPECT_EQ(r.histories[0].stage, "finetune");
  EXPECT_EQ(r.histories[1].stage, "final");
  // Epoch 0 of the last stage is the mixed model itself.
  EXPECT_EQ(r.histories[1].history.size(), 11u);
  if (r.histories[1].best_epoch == 0) EXPECT_EQ(r.final, s.mixed);
}

TEST(CropPersonalize, DeterministicForFixedConfig) {
  const auto& b = bench();
  const auto a = crop_personalize(b.generic, b.split.available, small_crop());
  const auto c = crop_personalize(b.generic, b.split.available, small_crop());
  EXPECT_EQ(a.final, c.final);
  EXPECT_EQ(a.mask, c.mask);
}

TEST(CropPersonalize, UntolerablePruningDegeneratesToRefinetune) {
  const auto& b = bench();
  CropConfig c = small_crop();
  c.prune.tau = 1e-9;
  c.prune.k = 1.0;
  c.prune.k_step = 1.0;
  const auto r = crop_personalize(b.generic, b.split.available, c);
  EXPECT_EQ(r.mask, Mask::ones(b.generic));
  EXPECT_EQ(r.prune_fraction, 0.0);
  EXPECT_EQ(r.stages->mixed, r.stages->finetuned);
  EXPECT_EQ(r.stages->pruned, r.stages->finetuned);
  // The first stage alone is a plain train() of the generic model.
  EXPECT_EQ(r.stages->finetuned, train(b.generic, b.split.available, c.train_initial).best);
}

TEST(CropPersonalize, NeverReadsUnseenContextRows) {
  const auto& b = bench();
  LabeledDataset user = b.ex.data.filter_users({b.split.user});
  std::set<std::string> touched;
  user.set_observer([&](const std::string&, const std::string& ctx) { touched.insert(ctx); });
  const LabeledDataset available = user.filter_contexts({"c0"});
  CropConfig c = small_crop();
  c.iterative_passes = 2;
  c.prune.strategy = PruneStrategy::gradient_low;
  (void)crop_personalize(b.generic, available, c);
  EXPECT_EQ(touched, (std::set<std::string>{"c0"}));
}

TEST(CropPersonalize, IterativePassesLabelHistories) {
  const auto& b = bench();
  CropConfig c = small_crop();
  c.iterative_passes = 3;
  const auto r = crop_personalize(b.generic, b.split.available, c);
  ASSERT_EQ(r.histories.size(), 4u);
  EXPECT_EQ(r.histories[3].stage, "final_3");
  EXPECT_EQ(mix(r.stages->pruned, b.generic, r.mask), r.stages->mixed);
}

TEST(CropPersonalize, SnapshotsCanBeDropped) {
  const auto& b = bench();
  CropConfig c = small_crop();
  c.keep_stage_snapshots = false;
  EXPECT_FALSE(crop_personalize(b.generic, b.split.available, c).stages.has_value());
}

TEST(CropPersonalize, EmptyDataAndBadPassesAreUsageErrors) {
  const auto& b = bench();
  EXPECT_THROW(crop_personalize(b.generic, LabeledDataset(8, 4), small_crop()), UsageError);
  CropConfig c = small_crop();
  c.iterative_passes = 0;
  EXPECT_THROW(crop_personalize(b.generic, b.split.available, c), UsageError);
}

TEST(CropPersonalize, SelfDistributionControlKeepsAccuracy) {
  // Generic already fits the personal distribution: CRoP should neither help nor hurt much.
  const auto generic_data = testing::blobs(200, 4, 0.4, 21, "c0", 1.0);
  const auto personal = testing::blobs(40, 4, 0.4, 22, "c0", 1.0);
  const auto test = testing::blobs(500, 4, 0.4, 23, "c0", 1.0);
  TrainConfig g;
  g.epochs = 40;
  g.learning_rate = 0.05;
  g.seed = 1;
  const auto generic = train(ModelParams::random(std::vector<std::size_t>{4, 16, 2}, 1), generic_data, g).best;
  const auto r = crop_personalize(generic, personal, small_crop());
  EXPECT_NEAR(testing::accuracy_of(r.final, test), testing::accuracy_of(generic, test), 0.04);
}

}  // namespace
}  // namespace crop
