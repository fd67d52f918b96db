#include <gtest/gtest.h>

#include <string>

#include "lionxa/error.hpp"
#include "lionxa/scenario.hpp"

using namespace lionxa;

namespace {

ErrorCode load_error(const std::string& text) {
  try {
    load_scenario(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoError;
}

std::string with_replaced(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return text.replace(pos, from.size(), to);
}

}  // namespace

TEST(Scenario, AllPresetsLoadAndValidate) {
  const auto names = builtin_scenario_names();
  EXPECT_GE(names.size(), 5u);
  for (const auto& n : names) {
    const ScenarioConfig c = builtin_scenario(n);
    EXPECT_EQ(c.name, n);
    EXPECT_NO_THROW(c.validate());
    EXPECT_GT(c.class_mapping().num_classes(), 0);
  }
}

TEST(Scenario, KittiToPossWeights) {
  const LossWeights w = builtin_scenario("kitti-to-poss").weights;
  EXPECT_EQ(w.lambda_p, 0.8);
  EXPECT_EQ(w.lambda_s, 0.8);
  EXPECT_EQ(w.lambda_tl, 1.0);
  EXPECT_EQ(w.lambda_t, 0.1);
  EXPECT_EQ(w.g2d_tp, 0.07);
  EXPECT_EQ(w.g3d_tp, 0.05);
  EXPECT_EQ(w.g2d_tf, 0.001);
}

TEST(Scenario, NuScenesDayNightDisablesTargetLike) {
  const ScenarioConfig c = builtin_scenario("nuscenes-usa-sg");
  EXPECT_EQ(c.weights.lambda_tl, 0.0);
  EXPECT_FALSE(c.training.enable_targetlike);
}

TEST(Scenario, NegativeWeightRejected) {
  const std::string text(builtin_scenario_text("kitti-to-poss"));
  EXPECT_EQ(load_error(with_replaced(text, "lambda_t = 0.1", "lambda_t = -0.1")), ErrorCode::kConfigError);
}

TEST(Scenario, LambdaPAtLeastOneRejected) {
  const std::string text(builtin_scenario_text("kitti-to-poss"));
  EXPECT_EQ(load_error(with_replaced(text, "lambda_p = 0.8", "lambda_p = 1.0")), ErrorCode::kConfigError);
}

TEST(Scenario, UnknownKeyRejected) {
  const std::string text(builtin_scenario_text("kitti-to-poss"));
  EXPECT_EQ(load_error(with_replaced(text, "lambda_t = 0.1", "lambda_t = 0.1\nlambda_x = 2")),
            ErrorCode::kConfigError);
}

TEST(Scenario, UnknownSectionRejected) {
  const std::string text(builtin_scenario_text("kitti-to-poss"));
  EXPECT_EQ(load_error(text + "\n[extras]\nfoo = 1\n"), ErrorCode::kConfigError);
}

TEST(Scenario, RenderLoadRoundTrip) {
  for (const auto& n : builtin_scenario_names()) {
    const ScenarioConfig c = builtin_scenario(n);
    EXPECT_EQ(load_scenario(render_scenario(c)), c) << n;
  }
}

TEST(Scenario, UnknownNameOrPathRejected) {
  EXPECT_THROW(resolve_scenario("/nonexistent/scenario.cfg"), Error);
}

TEST(Ablation, FourVariantsWithExpectedFlags) {
  const ScenarioConfig base = builtin_scenario("synthetic-64-to-32");
  const auto v = ablation_variants(base);
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].name, "full");
  EXPECT_EQ(v[1].name, "no-discriminator");
  EXPECT_EQ(v[2].name, "no-targetlike");
  EXPECT_EQ(v[3].name, "no-dis-no-tgl");
  EXPECT_EQ(v[0].config, base);
  EXPECT_FALSE(v[1].config.training.enable_discriminators);
  EXPECT_TRUE(v[1].config.training.enable_targetlike);
  EXPECT_FALSE(v[2].config.training.enable_targetlike);
  EXPECT_TRUE(v[2].config.training.enable_discriminators);
  EXPECT_FALSE(v[3].config.training.enable_targetlike);
  EXPECT_FALSE(v[3].config.training.enable_discriminators);
}

TEST(Ablation, NoDiscriminatorZeroesEveryAdversarialWeight) {
  const LossWeights w = ablation_variants(builtin_scenario("synthetic-64-to-32"))[1].config.effective_weights();
  for (double x : {w.g2d_tp, w.g3d_tp, w.g2d_tf, w.d2d_tp, w.d3d_tp, w.d2d_tf, w.d2d_sp, w.d3d_sp, w.d2d_sf}) {
    EXPECT_EQ(x, 0.0);
  }
  EXPECT_FALSE(w.adversarial());
}

TEST(Ablation, BaselineHasNoAdaptationTerms) {
  const LossWeights w = baseline_variant(builtin_scenario("synthetic-64-to-32")).effective_weights();
  EXPECT_EQ(w.lambda_s, 0.0);
  EXPECT_EQ(w.lambda_tl, 0.0);
  EXPECT_EQ(w.lambda_t, 0.0);
  EXPECT_FALSE(w.adversarial());
}

TEST(Ablation, OracleSupervisesOnTarget) {
  const ScenarioConfig o = oracle_variant(builtin_scenario("synthetic-64-to-32"));
  EXPECT_EQ(o.training.supervision, Supervision::kTarget);
  EXPECT_FALSE(o.effective_weights().adversarial());
}

TEST(Scenario, ShortenedRunKeepsMilestonesInRange) {
  const ScenarioConfig c = with_max_iter(builtin_scenario("synthetic-64-to-32"), 10);
  EXPECT_EQ(c.training.max_iter, 10);
  EXPECT_EQ(c.optimizer.milestones, (std::vector<std::int64_t>{8, 9}));
  EXPECT_NO_THROW(c.validate());
}
