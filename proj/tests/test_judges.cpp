#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "patternrl/judges.hpp"
#include "patternrl/toy_task.hpp"

using namespace patternrl;

namespace {

const char* kGood =
    "<fast>fake</fast><planning>p</planning><reasoning>a b c</reasoning><conclusion>fake</conclusion>";
const char* kWrong = "<fast>real</fast><reasoning>a</reasoning><conclusion>real</conclusion>";

StubClient constant(std::string reply) {
  return StubClient([reply](const TextRequest&) { return reply; });
}

}  // namespace

TEST(Elo, EqualRatingsWinnerTakesSixteen) {
  EloTable t;
  t.add_player("A");
  t.add_player("B");
  t.update("A", "B");
  EXPECT_EQ(t.rating("A"), 1016.0);
  EXPECT_EQ(t.rating("B"), 984.0);
  EXPECT_EQ(elo_expected(1000, 1000), 0.5);
  const auto f = elo_update(t, "B", "A", true);
  EXPECT_EQ(t.rating("A"), 1016.0);  // functional form leaves the input alone
  EXPECT_NEAR(f.rating("A") + f.rating("B"), 2000.0, 1e-12);
}

TEST(Elo, MatchesIndependentFormulaAndConserves) {
  std::mt19937_64 rng(1);
  for (int seq = 0; seq < 200; ++seq) {
    EloTable t(32.0);
    std::vector<std::string> names = {"a", "b", "c", "d"};
    std::map<std::string, double> ref;
    for (auto& n : names) {
      t.add_player(n);
      ref[n] = 1000.0;
    }
    for (int m = 0; m < 100; ++m) {
      const auto i = rng() % 4;
      auto j = rng() % 3;
      if (j >= i) ++j;
      const bool tie = rng() % 5 == 0;
      t.update(names[i], names[j], tie);
      std::tie(ref[names[i]], ref[names[j]]) =
          oracle::elo_step(ref[names[i]], ref[names[j]], tie ? 0.5 : 1.0, 32.0);
    }
    for (auto& n : names) EXPECT_NEAR(t.rating(n), ref[n], 1e-9);
    EXPECT_NEAR(t.total(), 4000.0, 1e-6);
  }
  EloTable t;
  t.add_player("x");
  EXPECT_THROW(t.update("x", "y"), std::out_of_range);
  EXPECT_THROW(t.update("x", "x"), std::invalid_argument);
}

TEST(Score, ParsesLastBracketAndFloorsWrongVerdicts) {
  EXPECT_EQ(parse_bracket_score("[[2]] then [[4]]"), 4);
  EXPECT_FALSE(parse_bracket_score("[[A]]"));
  auto five = constant("{\"judgment\": \"[[5]]\"}");
  EXPECT_EQ(score_trace(kGood, Verdict::kFake, five), 5);
  EXPECT_EQ(score_trace(kWrong, Verdict::kFake, five), 1);
  EXPECT_EQ(score_trace("<fast>fake", Verdict::kFake, five), 1);
  EXPECT_THROW(score_trace("  ", Verdict::kFake, five), std::invalid_argument);
}

TEST(Score, RetriesThenThrows) {
  int calls = 0;
  StubClient flaky([&calls](const TextRequest&) -> std::string {
    ++calls;
    if (calls == 1) throw ClientError("down");
    if (calls == 2) return "[[9]]";
    return "[[3]]";
  });
  EXPECT_EQ(score_trace(kGood, Verdict::kFake, flaky), 3);
  EXPECT_EQ(calls, 3);
  auto junk = constant("no idea");
  EXPECT_THROW(score_trace(kGood, Verdict::kFake, junk, {2, ""}), JudgeError);
}

TEST(Pairwise, PositionIsRandomizedAndMappedBack) {
  long swapped = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) swapped += pairwise_swapped(s) ? 1 : 0;
  const double frac = static_cast<double>(swapped) / 10000.0;
  EXPECT_GE(frac, 0.47);
  EXPECT_LE(frac, 0.53);

  // A judge that always prefers whatever sits in the first slot.
  auto first = constant("[[A]]");
  long a_wins = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto o = pairwise_compare(kGood, kWrong, Verdict::kFake, first, s);
    a_wins += o == PairOutcome::kA ? 1 : 0;
    EXPECT_EQ(o == PairOutcome::kA, !pairwise_swapped(s));
  }
  EXPECT_NEAR(static_cast<double>(a_wins) / 2000.0, 0.5, 0.05);
}

TEST(Pairwise, ContentJudgeIsOrderInvariant) {
  auto judge = toy::stub_judge();
  for (std::uint64_t s = 0; s < 50; ++s) {
    EXPECT_EQ(pairwise_compare(kGood, kWrong, Verdict::kFake, *judge, s), PairOutcome::kA);
    EXPECT_EQ(pairwise_compare(kWrong, kGood, Verdict::kFake, *judge, s), PairOutcome::kB);
    EXPECT_EQ(pairwise_compare(kGood, kGood, Verdict::kFake, *judge, s), PairOutcome::kTie);
  }
  auto junk = constant("hmm");
  EXPECT_THROW(pairwise_compare(kGood, kWrong, Verdict::kFake, junk, 0), JudgeError);
  EXPECT_THROW(pairwise_compare("<fast>x", kWrong, Verdict::kFake, *judge, 0), TraceParseError);
}

TEST(Quality, RubricMeansAndEloRanking) {
  std::vector<QualitySample> samples;
  ModelTraces good{"good", {}}, bad{"bad", {}};
  for (int i = 0; i < 20; ++i) {
    const std::string id = "s" + std::to_string(i);
    samples.push_back({id, "", Verdict::kFake});
    good.traces[id] = kGood;
    bad.traces[id] = kWrong;
  }
  samples.push_back({"missing", "", Verdict::kFake});
  good.traces["missing"] = kGood;
  auto judge = toy::stub_judge();
  QualityOptions opt;
  opt.workers = 2;
  const auto rep = run_quality_eval(samples, {good, bad}, {{"stub", judge.get()}}, opt);
  EXPECT_EQ(rep.samples_used, 20);
  EXPECT_EQ(rep.samples_skipped, 1);
  const auto& q = rep.judges.at("stub");
  EXPECT_DOUBLE_EQ(q.mean_score.at("good"), 4.0);
  EXPECT_DOUBLE_EQ(q.mean_score.at("bad"), 1.0);
  EXPECT_GT(q.elo.rating("good"), q.elo.rating("bad"));
  EXPECT_NEAR(q.elo.total(), 2000.0, 1e-9);
  EXPECT_EQ(q.matches, 20);
  const auto again = run_quality_eval(samples, {good, bad}, {{"stub", judge.get()}}, opt);
  EXPECT_EQ(again.to_jsonl(), rep.to_jsonl());
  EXPECT_THROW(run_quality_eval({}, {good, bad}, {{"stub", judge.get()}}), JudgeError);
}
