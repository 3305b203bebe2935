#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "patternrl/trace.hpp"

using namespace patternrl;

namespace {

std::vector<PatternTag> to_tags(const std::vector<int>& idx) {
  std::vector<PatternTag> out;
  for (int i : idx) out.push_back(static_cast<PatternTag>(i));
  return out;
}

}  // namespace

TEST(Trace, ExhaustiveGrammarUpToSix) {
  long checked = 0, accepted = 0;
  for (int k = 0; k <= 6; ++k) {
    long n = 1;
    for (int i = 0; i < k; ++i) n *= 5;
    for (long code = 0; code < n; ++code) {
      std::vector<int> seq(k);
      long c = code;
      for (int i = 0; i < k; ++i) {
        seq[i] = static_cast<int>(c % 5);
        c /= 5;
      }
      const auto tags = to_tags(seq);
      ASSERT_EQ(validate_format(tags), oracle::grammar_accepts(seq)) << "k=" << k << " code=" << code;
      ++checked;
      accepted += oracle::grammar_accepts(seq) ? 1 : 0;
    }
  }
  EXPECT_EQ(checked, 1 + 5 + 25 + 125 + 625 + 3125 + 15625);
  EXPECT_EQ(accepted, 4);
}

TEST(Trace, ParsesFullTrace) {
  const auto t = parse_trace(
      "<fast>Fake</fast> <planning>check eyes</planning><reasoning>teeth blur</reasoning>"
      "<reflection>lighting agrees</reflection><conclusion>This is a fake image.</conclusion>");
  ASSERT_EQ(t.segments.size(), 5u);
  EXPECT_TRUE(validate_format(t));
  EXPECT_EQ(extract_verdict(t), Verdict::kFake);
  EXPECT_EQ(t.segments[1].text, "check eyes");
}

TEST(Trace, TextOutsideTagsIgnoredAndEmptyRegionsDropped) {
  const auto t = parse_trace("preamble <fast> real </fast> junk <planning>  </planning>"
                             "<reasoning>x</reasoning><conclusion>real</conclusion> tail");
  EXPECT_EQ(t.tags(), (std::vector<PatternTag>{PatternTag::kFast, PatternTag::kReasoning,
                                               PatternTag::kConclusion}));
}

TEST(Trace, MalformedInputsThrow) {
  EXPECT_THROW(parse_trace("<fast>real"), TraceParseError);
  EXPECT_THROW(parse_trace("real</fast>"), TraceParseError);
  EXPECT_THROW(parse_trace("<fast>a<reasoning>b</reasoning></fast>"), TraceParseError);
  try {
    parse_trace("ok <planning>never closed");
    FAIL();
  } catch (const TraceParseError& e) {
    EXPECT_EQ(e.tag(), "planning");
    EXPECT_EQ(e.offset(), 3u);
  }
}

TEST(Trace, VerdictIsWholeWordAndUsesLastConclusion) {
  auto v = [](const std::string& concl) {
    return try_extract_verdict(parse_trace("<fast>x</fast><conclusion>" + concl + "</conclusion>"));
  };
  EXPECT_EQ(v("REAL"), Verdict::kReal);
  EXPECT_EQ(v("it is fake."), Verdict::kFake);
  EXPECT_FALSE(v("unreal fakery"));
  EXPECT_FALSE(v("real or fake"));
  EXPECT_FALSE(try_extract_verdict(parse_trace("<fast>fake</fast>")));
  EXPECT_THROW(extract_verdict(parse_trace("<conclusion>real fake</conclusion>")),
               AmbiguousVerdictError);
  const auto t = parse_trace("<conclusion>real</conclusion><conclusion>fake</conclusion>");
  EXPECT_EQ(extract_verdict(t), Verdict::kFake);
}

TEST(Trace, TagNamesRoundTrip) {
  for (auto tag : kAllTags) EXPECT_EQ(tag_from_name(tag_name(tag)), tag);
  EXPECT_FALSE(tag_from_name("Fast"));
  EXPECT_EQ(verdict_from_name(" Fake "), Verdict::kFake);
  EXPECT_FALSE(verdict_from_name("maybe"));
}

TEST(Trace, FuzzedRoundTrip) {
  std::mt19937_64 rng(7);
  const std::string alphabet = "abc xyz<>/ real fake\n\t.";
  for (int i = 0; i < 2000; ++i) {
    ReasoningTrace t;
    const int n = static_cast<int>(rng() % 7);
    for (int s = 0; s < n; ++s) {
      std::string body;
      const int len = 1 + static_cast<int>(rng() % 20);
      for (int c = 0; c < len; ++c) body += alphabet[rng() % alphabet.size()];
      // Tag-like text inside a body would re-tokenize; keep bodies tag-free.
      std::string clean;
      for (char ch : body) clean += (ch == '<' ? '[' : ch);
      clean = std::string(trim(clean));
      if (clean.empty()) clean = "w";
      t.segments.push_back({kAllTags[rng() % 5], clean});
    }
    const auto back = parse_trace(serialize_trace(t));
    ASSERT_EQ(back.segments, t.segments);
  }
}
