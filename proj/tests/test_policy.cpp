#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "patternrl/policy.hpp"

using namespace patternrl;

TEST(ToyPolicy, NextTokenDistributionNormalized) {
  const auto pol = ToyPolicy::random(1, 1.0);
  const Observation obs{{1, 0, -1, 1}, ""};
  const std::vector<TokenId> prefix = {toy_vocab::open_tag(0), toy_vocab::kFake};
  const auto lp = pol.next_logprobs(obs, prefix);
  double s = 0;
  for (double x : lp) s += std::exp(x);
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_EQ(pol.logprob(obs, std::vector<TokenId>{toy_vocab::open_tag(0)})[0],
            pol.next_logprobs(obs, {})[toy_vocab::open_tag(0)]);
}

TEST(ToyPolicy, ZeroInitIsUniform) {
  const ToyPolicy pol;
  const auto lp = pol.logprob({}, std::vector<TokenId>{3, 5, 0});
  for (double x : lp) EXPECT_NEAR(x, -std::log(24.0), 1e-15);
}

TEST(ToyPolicy, SamplingIsSeedDeterministicAndConsistent) {
  const auto pol = ToyPolicy::random(2, 1.0);
  const Observation obs{{0, 1, 1, -1}, ""};
  const auto a = pol.sample(obs, 1.0, 42);
  const auto b = pol.sample(obs, 1.0, 42);
  EXPECT_EQ(a.tokens, b.tokens);
  const auto lp = pol.logprob(obs, a.tokens);
  ASSERT_EQ(lp.size(), a.logprobs.size());
  for (std::size_t i = 0; i < lp.size(); ++i) EXPECT_DOUBLE_EQ(lp[i], a.logprobs[i]);
  EXPECT_LE(a.tokens.size(), static_cast<std::size_t>(ToyPolicy::kMaxLength));
  // Near-zero temperature is greedy.
  const auto g1 = pol.sample(obs, 1e-6, 1);
  const auto g2 = pol.sample(obs, 1e-6, 2);
  EXPECT_EQ(g1.tokens, g2.tokens);
  EXPECT_THROW(pol.sample(obs, 0.0, 1), std::invalid_argument);
}

TEST(ToyPolicy, RejectsOutOfVocabTokens) {
  const ToyPolicy pol;
  EXPECT_THROW(pol.logprob({}, std::vector<TokenId>{24}), std::invalid_argument);
  EXPECT_THROW(pol.logprob({}, std::vector<TokenId>{-1}), std::invalid_argument);
}

TEST(ToyPolicy, RenderTokenizeRoundTrip) {
  const ToyPolicy pol;
  const std::string text = "<fast>fake</fast><reasoning>" + std::string(toy_vocab::word(13)) +
                           " " + std::string(toy_vocab::word(14)) +
                           "</reasoning><conclusion>fake</conclusion>";
  const auto toks = pol.tokenize(text);
  EXPECT_EQ(toks.back(), toy_vocab::kEos);
  EXPECT_EQ(pol.render(toks), text);
  EXPECT_THROW(pol.tokenize("<fast>banana</fast>"), std::invalid_argument);
}

TEST(ToyPolicy, SerializeRoundTripIsExact) {
  const auto pol = ToyPolicy::random(3, 0.7);
  const auto back = ToyPolicy::deserialize(pol.serialize());
  ASSERT_EQ(back.parameters().size(), pol.parameters().size());
  for (std::size_t i = 0; i < pol.parameters().size(); ++i) {
    ASSERT_EQ(back.parameters()[i], pol.parameters()[i]);
  }
  const auto path = std::filesystem::temp_directory_path() / "patternrl_policy_test.snap";
  pol.save(path);
  EXPECT_EQ(ToyPolicy::load(path).serialize(), pol.serialize());
  std::filesystem::remove(path);
  std::string bad = pol.serialize();
  bad.replace(bad.find("vocab_hash ") + 11, 4, "ffff");
  EXPECT_THROW(ToyPolicy::deserialize(bad), std::runtime_error);
}

TEST(ToyPolicy, SnapshotIsIndependent) {
  auto pol = ToyPolicy::random(4, 0.5);
  const auto snap = pol.snapshot();
  const double before = snap->parameters()[17];
  pol.mutable_parameters()[17] += 1.0;
  EXPECT_EQ(snap->parameters()[17], before);
}

TEST(ToyPolicy, LogprobGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pol = ToyPolicy::random(rng(), 0.5);
    const auto obs = gradcheck::draw_obs(rng);
    const auto toks = pol.sample(obs, 1.0, rng()).tokens;
    const auto g = pol.grad_logprob(obs, toks);
    const auto f = [&](const std::vector<double>& p) {
      return gradcheck::sum(gradcheck::with_params(p).logprob(obs, toks));
    };
    const auto r = gradcheck::compare(f, gradcheck::params_of(pol), g, rng);
    EXPECT_GT(r.checked, 0);
    EXPECT_LE(r.max_rel, 1e-6);
    EXPECT_LE(r.max_abs_zero, 1e-8);
  }
}
