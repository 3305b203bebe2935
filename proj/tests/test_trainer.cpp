#include <gtest/gtest.h>

#include <cmath>

#include "patternrl/toy_task.hpp"
#include "patternrl/trainer.hpp"

using namespace patternrl;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.sft.lr = 20;
  c.sft.epochs = 2;
  c.mipo.lr = 0.5;
  c.mipo.beta = 1.0;
  c.mipo.batch = 32;
  c.pgrpo.lr = 1.0;
  c.pgrpo.max_steps = 12;
  return c;
}

toy::PipelineSizes small_sizes() { return {256, 128, 192}; }

}  // namespace

TEST(TrainConfig, DefaultsAndRoundTrip) {
  const TrainConfig d;
  EXPECT_EQ(d.sft.epochs, 3);
  EXPECT_EQ(d.sft.lr, 5e-5);
  EXPECT_EQ(d.sft.batch, 64);
  EXPECT_EQ(d.mipo.epochs, 2);
  EXPECT_EQ(d.pgrpo.epochs, 2);
  EXPECT_EQ(d.pgrpo.lr, 1e-6);
  EXPECT_EQ(d.pgrpo.batch, 16);
  EXPECT_EQ(d.pgrpo.group_size, 4);
  EXPECT_EQ(d.pgrpo.temperature, 1.0);
  EXPECT_EQ(d.pgrpo.beta_prime, 0.0);
  EXPECT_EQ(d.adapter.at("rank"), "128");
  EXPECT_EQ(d.adapter.at("alpha"), "256");

  Config cfg;
  auto c = small_config();
  c.pgrpo.reward.mode = RewardMode::kAccuracy;
  c.pgrpo.std_kind = StdKind::kSample;
  c.to_config(cfg);
  Config reparsed = Config::parse(cfg.dump());
  const auto back = TrainConfig::from_config(reparsed);
  EXPECT_EQ(back.sft.lr, 20);
  EXPECT_EQ(back.mipo.beta, 1.0);
  EXPECT_EQ(back.pgrpo.max_steps, 12);
  EXPECT_EQ(back.pgrpo.reward.mode, RewardMode::kAccuracy);
  EXPECT_EQ(back.pgrpo.std_kind, StdKind::kSample);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  auto c = small_config();
  c.pgrpo.group_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.sft.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.pgrpo.temperature = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  Config cfg;
  cfg.set("pgrpo.reward_mode", "vibes");
  EXPECT_ANY_THROW(TrainConfig::from_config(cfg));
}

TEST(Sft, LossFallsAndReturnsLastStep) {
  ToyPolicy p;
  RunLedger ledger;
  const auto data = toy::make_sft_data(256, 1);
  const auto snap = train_sft(p, data, {3, 20.0, 64}, 1, ledger);
  const auto e = ledger.stage("sft");
  ASSERT_EQ(e.size(), 12u);
  EXPECT_LT(e.back().loss, e.front().loss);
  for (std::size_t i = 0; i < p.parameters().size(); ++i) {
    ASSERT_EQ(snap->parameters()[i], p.parameters()[i]);
  }
}

TEST(Mipo, ReferenceUntouchedAndMarginGrows) {
  ToyPolicy p;
  RunLedger ledger;
  train_sft(p, toy::make_sft_data(256, 2), {2, 20.0, 64}, 2, ledger);
  const auto ref = p.snapshot();
  const std::vector<double> ref_params(ref->parameters().begin(), ref->parameters().end());
  auto judge = toy::stub_judge();
  const auto pairs = toy::make_preference_data(*ref, 256, *judge, 2);
  ASSERT_FALSE(pairs.empty());
  train_mipo(p, ref, pairs, {3, 0.5, 32, 1.0}, 2, ledger);
  const auto e = ledger.stage("mipo");
  ASSERT_FALSE(e.empty());
  EXPECT_EQ(e.front().margin, 0.0);  // policy starts at the reference
  EXPECT_NEAR(e.front().loss, std::log(2.0), 1e-12);
  EXPECT_GT(e.back().margin, 0.0);
  for (std::size_t i = 0; i < ref_params.size(); ++i) ASSERT_EQ(ref->parameters()[i], ref_params[i]);
}

TEST(Pgrpo, DeterministicAcrossRunsAndWorkerCounts) {
  auto judge = toy::stub_judge();
  auto c = small_config();
  RunLedger a, b;
  const auto ra = toy::run_pipeline(c, small_sizes(), *judge, a);
  c.workers = 3;
  const auto rb = toy::run_pipeline(c, small_sizes(), *judge, b);
  EXPECT_EQ(a.entries(), b.entries());
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(rollouts_to_jsonl(ra.pgrpo.rollouts), rollouts_to_jsonl(rb.pgrpo.rollouts));
  c.seed = 1;
  RunLedger other;
  toy::run_pipeline(c, small_sizes(), *judge, other);
  EXPECT_NE(other.digest(), a.digest());
}

TEST(Pgrpo, RewardAccountingMatchesRollouts) {
  auto judge = toy::stub_judge();
  RunLedger ledger;
  const auto r = toy::run_pipeline(small_config(), small_sizes(), *judge, ledger);
  const auto by_step = mean_reward_by_step(r.pgrpo.rollouts);
  const auto e = ledger.stage("pgrpo");
  ASSERT_EQ(e.size(), 12u);
  ASSERT_EQ(by_step.size(), e.size());
  for (const auto& row : e) EXPECT_NEAR(by_step.at(row.step), row.mean_reward, 1e-12);
  EXPECT_EQ(r.pgrpo.rollouts.size(), 12u * 16u * 4u);
  // Rollout advantages are the group-standardized totals.
  for (std::size_t i = 0; i < r.pgrpo.rollouts.size(); i += 4) {
    std::vector<double> rewards;
    for (int g = 0; g < 4; ++g) rewards.push_back(r.pgrpo.rollouts[i + g].reward.total);
    const auto adv = grpo_advantages(rewards);
    for (int g = 0; g < 4; ++g) EXPECT_NEAR(r.pgrpo.rollouts[i + g].advantage, adv[g], 1e-12);
  }
}

TEST(Pgrpo, FinalPolicyMovesAwayFromColdStart) {
  auto judge = toy::stub_judge();
  RunLedger ledger;
  auto c = small_config();
  c.pgrpo.beta_prime = 0.1;
  const auto r = toy::run_pipeline(c, small_sizes(), *judge, ledger);
  bool moved = false;
  for (std::size_t i = 0; i < r.cold->parameters().size(); ++i) {
    moved = moved || r.cold->parameters()[i] != r.pgrpo.final_policy->parameters()[i];
  }
  EXPECT_TRUE(moved);
}

TEST(Pgrpo, FlatRewardsSkipTheUpdate) {
  // Accuracy reward with no extras on a uniform policy: nearly every rollout
  // is malformed, so most groups carry no signal.
  ToyPolicy p;
  const auto ref = p.snapshot();
  RewardConfig rc;
  rc.mode = RewardMode::kAccuracy;
  rc.use_reflection = false;
  rc.use_format = false;
  const RewardEngine engine(rc, nullptr);
  PgrpoConfig pc;
  pc.lr = 1.0;
  pc.max_steps = 5;
  RunLedger ledger;
  const auto r = train_pgrpo(p, ref, toy::make_rl_records(80, 0), engine, pc, 0, ledger);
  EXPECT_EQ(r.steps, 5);
  EXPECT_EQ(r.skipped_steps, 5);
  for (std::size_t i = 0; i < p.parameters().size(); ++i) ASSERT_EQ(p.parameters()[i], 0.0);
  for (const auto& e : ledger.entries()) EXPECT_TRUE(e.skipped);
}
