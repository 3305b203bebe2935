#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "patternrl/datapipe.hpp"
#include "patternrl/toy_task.hpp"

using namespace patternrl;
namespace fs = std::filesystem;

namespace {

const Taxonomy& tax() { return Taxonomy::standard(); }

std::vector<std::string> ballots(const std::vector<std::pair<std::string, int>>& votes,
                                 int total = 15) {
  std::vector<std::string> out(total);
  for (const auto& [name, n] : votes) {
    for (int i = 0; i < n; ++i) out[i] += name + ", ";
  }
  return out;
}

fs::path temp_file(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("patternrl_" + name);
  fs::remove(p);
  return p;
}

}  // namespace

TEST(Taxonomy, StandardListAndLookup) {
  ASSERT_EQ(tax().items().size(), 14u);
  EXPECT_EQ(tax().items()[0].name, "Color Difference");
  EXPECT_EQ(tax().index_of("color difference"), 0u);
  EXPECT_FALSE(tax().index_of("Purple Aura"));
  EXPECT_NE(tax().render(AbnormalityCategory::kSubtle).find("Over-smoothed Skin"),
            std::string::npos);
}

TEST(Vote, BallotParsing) {
  const auto b = parse_ballot("- Irregular Teeth\n* irregular teeth, Edge Abnormal, Nonsense", tax());
  EXPECT_EQ(b, (std::vector<std::size_t>{4, 5}));
}

TEST(Vote, StrictThresholdBoundary) {
  // Exactly 10 votes is not enough; 11 is.
  const auto r = tally_votes(ballots({{"Irregular Teeth", 11}, {"Edge Abnormal", 10}}), tax());
  EXPECT_EQ(r.selected, std::vector<std::string>{"Irregular Teeth"});
  EXPECT_TRUE(r.flagged);
  EXPECT_EQ(r.tally[4], 11);
  EXPECT_EQ(r.tally[5], 10);
  EXPECT_EQ(r.ballots, 15);
}

TEST(Vote, TopTwoByCountThenTaxonomyOrder) {
  const auto r = tally_votes(ballots({{"Repetitive Texture", 12},
                                      {"Color Difference", 12},
                                      {"Edge Abnormal", 14},
                                      {"Irregular Teeth", 11}}),
                             tax());
  EXPECT_EQ(r.selected, (std::vector<std::string>{"Edge Abnormal", "Color Difference"}));
  EXPECT_FALSE(r.flagged);
}

TEST(Vote, FailedCallsAreEmptyBallots) {
  int n = 0;
  StubClient flaky([&n](const TextRequest&) -> std::string {
    if (++n % 2 == 0) throw ClientError("boom");
    return "Color Difference, Edge Abnormal";
  });
  std::vector<TextClient*> voters = {&flaky, &flaky, &flaky};
  const auto r = stage1_vote({"i", "img", "real"}, voters, tax());
  EXPECT_EQ(r.ballots, 15);
  EXPECT_EQ(r.failed_calls, 7);
  EXPECT_EQ(r.tally[0], 8);
  EXPECT_TRUE(r.flagged);  // 8 <= 10
}

TEST(Stage2, RequiresTwoAbnormalitiesAndSplitsSections) {
  auto ok = StubClient([](const TextRequest&) {
    return std::string("1. Looks off.\n2. Teeth merge.\n3. Fake.");
  });
  const ImageItem item{"i", "img", "real"};
  const std::vector<std::string> one = {"Irregular Teeth"};
  EXPECT_THROW(stage2_forensics(item, one, ok, tax()), std::invalid_argument);
  const std::vector<std::string> two = {"Irregular Teeth", "Edge Abnormal"};
  const auto text = stage2_forensics(item, two, ok, tax());
  const auto s = split_stage2(text);
  EXPECT_EQ(s.initial, "Looks off.");
  EXPECT_EQ(s.forensics, "Teeth merge.");
  EXPECT_EQ(s.conclusion, "Fake.");
  EXPECT_EQ(split_stage2("no markers").forensics, "no markers");
  auto empty = StubClient([](const TextRequest&) { return std::string("  "); });
  EXPECT_THROW(stage2_forensics(item, two, empty, tax()), AnnotationError);
}

TEST(Stage3, RetriesFormatDropsWrongVerdict) {
  int n = 0;
  StubClient rewriter([&n](const TextRequest&) -> std::string {
    if (++n == 1) return "<fast>fake</fast><conclusion>fake</conclusion>";
    return "<fast>fake</fast><reasoning>x</reasoning><conclusion>fake</conclusion>";
  });
  const auto ok = stage3_patternize("text", Verdict::kFake, rewriter);
  ASSERT_TRUE(ok.trace);
  EXPECT_EQ(ok.attempts, 2);
  n = 1;
  const auto wrong = stage3_patternize("text", Verdict::kReal, rewriter);
  EXPECT_FALSE(wrong.trace);
  EXPECT_EQ(wrong.attempts, 1);
  EXPECT_FALSE(wrong.drop_reason.empty());
}

TEST(Store, LatestLineWinsAndReloads) {
  const auto path = temp_file("store.jsonl");
  {
    RecordStore s(path);
    s.put({"b", 1, {{"k", "v1"}}, RecordStatus::kOk});
    s.put({"a", 2, {}, RecordStatus::kFlagged});
    s.put({"b", 1, {{"k", "v2"}}, RecordStatus::kOk});
  }
  RecordStore s(path);
  EXPECT_EQ(s.get("b", 1)->payload.at("k"), "v2");
  const auto all = s.records();
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].image_id, "a");
  EXPECT_EQ(all[0].status, RecordStatus::kFlagged);
  fs::remove(path);
}

TEST(Annotation, StubPipelineIsResumable) {
  const auto path = temp_file("annot.jsonl");
  std::vector<ImageItem> items;
  for (int i = 0; i < 12; ++i) {
    items.push_back({"img" + std::to_string(i), "fake" + std::to_string(i) + ".jpg", "real.jpg",
                     Verdict::kFake, "face swapping", ""});
  }
  auto stub = make_stub_annotator(tax(), 3);
  AnnotatorSet set{{stub.get(), stub.get(), stub.get()}, stub.get(), stub.get()};
  AnnotationSummary first;
  {
    RecordStore store(path);
    first = run_annotation(items, set, tax(), store);
    EXPECT_EQ(first.accepted + first.flagged + first.dropped, 12);
    EXPECT_GT(first.accepted, 0);
    for (const auto& r : store.records()) {
      if (r.stage == 3 && r.status == RecordStatus::kOk) {
        const auto t = parse_trace(r.payload.at("trace"));
        EXPECT_TRUE(validate_format(t));
        EXPECT_EQ(extract_verdict(t), Verdict::kFake);
      }
    }
  }
  int calls = 0;
  StubClient counting([&](const TextRequest& r) {
    ++calls;
    return stub->complete(r);
  });
  AnnotatorSet again{{&counting, &counting, &counting}, &counting, &counting};
  RecordStore store(path);
  const auto second = run_annotation(items, again, tax(), store);
  EXPECT_EQ(second.resumed, 12);
  EXPECT_EQ(calls, 0);
  EXPECT_EQ(second.accepted, first.accepted);
  fs::remove(path);
}

TEST(Pairs, KindsAndInvariants) {
  const std::string expert =
      "<fast>fake</fast><planning>p</planning><reasoning>a b c</reasoning>"
      "<reflection>z</reflection><conclusion>fake</conclusion>";
  const std::vector<CandidateOutput> cands = {
      {"wrong", "", Verdict::kFake, "<fast>real</fast><reasoning>x</reasoning><conclusion>real</conclusion>"},
      {"thin", "", Verdict::kFake, "<fast>fake</fast><reasoning>x</reasoning><conclusion>fake</conclusion>"},
      {"rich", "", Verdict::kFake, expert},
      {"broken", "", Verdict::kFake, "<fast>fake"},
      {"orphan", "", Verdict::kFake, expert},
  };
  std::map<std::string, std::string> experts;
  for (const auto* id : {"wrong", "thin", "rich", "broken"}) experts[id] = expert;
  auto judge = toy::stub_judge();
  const auto res = build_mipo_pairs(cands, experts, *judge);
  EXPECT_EQ(res.stats.psi, 1);
  EXPECT_EQ(res.stats.phi, 1);
  EXPECT_EQ(res.stats.discarded, 1);
  EXPECT_EQ(res.stats.unparseable, 1);
  EXPECT_EQ(res.stats.missing_expert, 1);
  ASSERT_EQ(res.pairs.size(), 2u);
  for (const auto& p : res.pairs) EXPECT_TRUE(verify_pair(p));
  EXPECT_EQ(res.pairs[1].kind, RejectKind::kPhi);
  EXPECT_EQ(res.pairs[1].judge_score, 2);

  auto flipped = res.pairs[0];
  flipped.kind = RejectKind::kPhi;
  EXPECT_FALSE(verify_pair(flipped));
}

TEST(Pairs, ProvenanceCheck) {
  std::vector<PreferencePair> pairs(3);
  pairs[0].image_id = "t1";
  pairs[1].image_id = "t2";
  pairs[2].image_id = "eval9";
  const std::set<std::string> train = {"t1", "t2"};
  EXPECT_EQ(provenance_violations(pairs, train), std::vector<std::string>{"eval9"});
  EXPECT_THROW(require_provenance(pairs, train), ProvenanceError);
  pairs.pop_back();
  EXPECT_NO_THROW(require_provenance(pairs, train));
}
