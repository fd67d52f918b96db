#include <gtest/gtest.h>

#include <random>

#include "lionxa/error.hpp"
#include "lionxa/losses.hpp"
#include "lionxa/scenario.hpp"
#include "lionxa/trainer.hpp"

using namespace lionxa;

namespace {

ScenarioConfig small_config() {
  ScenarioConfig c = builtin_scenario("synthetic-64-to-32");
  c.data = DataConfig{2, 2, 1, 1};
  c = with_max_iter(c, 4);
  c.training.val_every = 2;
  return c;
}

const DataPools& pools() {
  static const DataPools p = build_pools(small_config());
  return p;
}

Batch make_batch(const std::vector<ProjectedScan>& scans, int width, const TrainingConfig& t,
                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch b;
  for (const auto& s : scans) b.samples.push_back(prepare_sample(s, width, t, rng));
  return b;
}

struct Batches {
  Batch source, target_like, target;
};

Batches batches(const ScenarioConfig& c) {
  const auto& p = pools();
  return {make_batch(p.supervised, c.training.cutout_width_source, c.training, 1),
          make_batch(p.target_like, c.training.cutout_width_target, c.training, 2),
          make_batch(p.target, c.training.cutout_width_target, c.training, 3)};
}

}  // namespace

TEST(Trainer, SourceOnlyStepReportsSupervisedLoss) {
  const ScenarioConfig c = baseline_variant(small_config());
  Trainer tr(c, pools().num_classes, pools().weights);
  const Seg2DNet n2 = tr.net2d().clone();
  const Seg3DNet n3 = tr.net3d().clone();
  const Batches b = batches(c);
  const StepStats st = tr.train_step(b.source, nullptr, &b.target);
  EXPECT_EQ(st.total, st.supervised);
  EXPECT_EQ(st.generator, 0.0);
  EXPECT_EQ(st.discriminator, 0.0);

  std::vector<SegTerms> terms;
  for (const auto& s : b.source.samples) terms.push_back(seg_terms(forward_sample(n2, n3, s), s));
  const double want =
      supervised_loss(terms, {}, c.weights.lambda_p, pools().weights, pools().weights).item();
  EXPECT_NEAR(st.supervised, want, 1e-12 * std::max(1.0, want));
}

TEST(Trainer, TotalIsWeightedSumOfReportedTerms) {
  const ScenarioConfig c = small_config();
  Trainer tr(c, pools().num_classes, pools().weights);
  const Batches b = batches(c);
  const StepStats st = tr.train_step(b.source, &b.target_like, &b.target);
  const LossWeights& w = c.weights;
  const double want = st.supervised + w.lambda_s * st.xm_source + w.lambda_tl * st.xm_target_like +
                      w.lambda_t * st.xm_target;
  EXPECT_NEAR(st.total, want, 1e-12 * std::max(1.0, want));
  EXPECT_GT(st.xm_source, 0.0);
  EXPECT_GT(st.xm_target_like, 0.0);
  EXPECT_GT(st.xm_target, 0.0);
  EXPECT_GT(st.generator, 0.0);
  EXPECT_GT(st.discriminator, 0.0);
}

TEST(Trainer, DiscriminatorsUntouchedWithoutAdversarialTraining) {
  const ScenarioConfig c = ablation_variants(small_config())[1].config;
  Trainer tr(c, pools().num_classes, pools().weights);
  const auto before = tr.discriminators().parameters().hash();
  const auto net_before = tr.net2d().parameters().hash();
  const Batches b = batches(c);
  tr.train_step(b.source, &b.target_like, &b.target);
  EXPECT_EQ(tr.discriminators().parameters().hash(), before);
  EXPECT_NE(tr.net2d().parameters().hash(), net_before);
}

TEST(Trainer, DiscriminatorsUpdatedOnlyFromTheirOwnLoss) {
  // With every discriminator weight zero the discriminator loss has no
  // gradient, so generator phases alone must leave them unchanged.
  ScenarioConfig c = small_config();
  c.weights.d2d_tp = c.weights.d3d_tp = c.weights.d2d_tf = 0.0;
  c.weights.d2d_sp = c.weights.d3d_sp = c.weights.d2d_sf = 0.0;
  Trainer tr(c, pools().num_classes, pools().weights);
  const auto before = tr.discriminators().parameters().hash();
  const Batches b = batches(c);
  const StepStats st = tr.train_step(b.source, &b.target_like, &b.target);
  EXPECT_GT(st.generator, 0.0);
  EXPECT_EQ(tr.discriminators().parameters().hash(), before);
}

TEST(Trainer, MissingTargetBatchRejected) {
  const ScenarioConfig c = small_config();
  Trainer tr(c, pools().num_classes, pools().weights);
  const Batches b = batches(c);
  try {
    tr.train_step(b.source, &b.target_like, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingTargetDomain);
  }
}

TEST(Trainer, ShortRunIsDeterministic) {
  const ScenarioConfig c = small_config();
  const RunResult a = run_training(c, pools());
  const RunResult b = run_training(c, pools());
  EXPECT_EQ(a.steps.size(), 4u);
  EXPECT_EQ(a.validation.size(), 2u);
  EXPECT_EQ(a.run_log, b.run_log);
  EXPECT_EQ(a.test.cm_ensemble, b.test.cm_ensemble);
}

TEST(Trainer, DerivedSeedsDifferByStream) {
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
  EXPECT_EQ(derive_seed(7, "x", 3), derive_seed(7, "x", 3));
}
