#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "patternrl/image.hpp"
#include "patternrl/protocol.hpp"
#include "synthetic.hpp"

using namespace patternrl;

namespace {

Verdict coin(const ManifestRecord& r) {
  return (std::hash<std::string>{}(r.id) & 4) ? Verdict::kFake : Verdict::kReal;
}

}  // namespace

TEST(Manifest, ParsesAndRoundTrips) {
  const auto m = synthetic::manifest(1);
  const auto text = manifest_to_jsonl(m);
  EXPECT_EQ(parse_manifest(text), m);
}

TEST(Manifest, SchemaErrorsNameTheLine) {
  const std::string good =
      R"({"id":"a","path":"a.png","label":"real","split":"id","subset":"ff"})";
  try {
    parse_manifest(good + "\n" + R"({"id":"b","path":"b.png","label":"maybe","split":"id","subset":"ff"})");
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_manifest("{not json"), ManifestError);
  EXPECT_THROW(parse_manifest(R"({"id":"a","path":"a","label":"real","split":"id"})"),
               ManifestError);  // eval split needs a subset
  EXPECT_THROW(parse_manifest(R"({"id":"a","path":"a","label":"fake","split":"train","forgery_type":"relight"})"),
               ManifestError);
  EXPECT_THROW(parse_manifest(good + "\n" + good), ManifestError);
}

TEST(Manifest, LeakageRejected) {
  auto m = synthetic::manifest(2);
  const auto train = std::find_if(m.begin(), m.end(), [](auto& r) { return r.split == Split::kTrain; });
  auto by_id = m;
  auto eval = std::find_if(by_id.begin(), by_id.end(), [](auto& r) { return r.split != Split::kTrain; });
  eval->id = train->id;
  EXPECT_THROW(parse_manifest(manifest_to_jsonl(by_id)), LeakageError);
  auto by_path = m;
  eval = std::find_if(by_path.begin(), by_path.end(), [](auto& r) { return r.split != Split::kTrain; });
  eval->path = train->path;
  EXPECT_THROW(check_manifest(by_path), LeakageError);
}

TEST(Evaluate, MatchesBruteForceRecount) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = synthetic::manifest(seed);
    const auto rep = evaluate(m, coin);
    std::map<std::pair<Split, std::string>, std::vector<std::pair<bool, bool>>> groups;
    for (const auto& r : m) {
      if (r.split == Split::kTrain) continue;
      groups[{r.split, r.subset}].push_back({r.label == Verdict::kFake, coin(r) == Verdict::kFake});
    }
    ASSERT_EQ(rep.subsets.size(), groups.size());
    std::size_t i = 0;
    for (const auto& [key, tp] : groups) {
      const auto& s = rep.subsets[i++];
      const auto c = oracle::recount(tp);
      EXPECT_EQ(s.split, key.first);
      EXPECT_EQ(s.subset, key.second);
      EXPECT_EQ(s.counts.tp, c.tp);
      EXPECT_EQ(s.counts.fp, c.fp);
      EXPECT_EQ(s.counts.fn, c.fn);
      EXPECT_EQ(s.counts.tn, c.tn);
      EXPECT_EQ(s.accuracy, static_cast<double>(c.tp + c.tn) / static_cast<double>(tp.size()));
    }
  }
}

TEST(Evaluate, AveragesAndDegenerateMetrics) {
  Confusion none{0, 0, 3, 2, 0};
  EXPECT_EQ(none.precision(), 0.0);
  EXPECT_EQ(none.recall(), 0.0);
  EXPECT_DOUBLE_EQ(none.accuracy(), 0.4);
  std::vector<SubsetMetrics> subs = {
      {Split::kId, "a", {}, 0.9}, {Split::kId, "b", {}, 0.7},
      {Split::kCrossModel, "c", {}, 0.6}, {Split::kCrossDomain, "d", {}, 0.5}};
  const auto rep = summarize(subs);
  EXPECT_DOUBLE_EQ(rep.split_average.at(Split::kId), 0.8);
  EXPECT_DOUBLE_EQ(rep.overall_average, (0.8 + 0.6 + 0.5) / 3.0);
}

TEST(Evaluate, AbstentionPolicies) {
  const auto m = synthetic::manifest(3, 60, 0);
  const Detector abstain_fakes = [](const ManifestRecord& r) -> Verdict {
    if (r.label == Verdict::kFake) throw std::runtime_error("no answer");
    return Verdict::kReal;
  };
  const auto wrong = evaluate(m, abstain_fakes);
  for (const auto& s : wrong.subsets) {
    EXPECT_EQ(s.counts.tp, 0);
    EXPECT_EQ(s.counts.abstained, s.counts.fn);
  }
  const auto excl = evaluate(m, abstain_fakes, {AbstentionPolicy::kExclude, 2});
  for (const auto& s : excl.subsets) {
    EXPECT_EQ(s.counts.fn, 0);
    if (s.counts.total() > 0) EXPECT_EQ(s.accuracy, 1.0);
  }
  EXPECT_EQ(evaluate(m, coin, {AbstentionPolicy::kWrong, 3}), evaluate(m, coin));
}

TEST(Image, PnmRoundTripIsLossless) {
  const auto img = synthetic::image(1, true);
  EXPECT_EQ(decode_image(encode_pnm(img)), img);
  Image gray(5, 4, 1, 77);
  EXPECT_EQ(decode_image(encode_pnm(gray)), gray);
  EXPECT_THROW(decode_image(std::vector<std::uint8_t>{1, 2, 3}), ImageError);
}

TEST(Image, JpegQualityOrdersError) {
  const auto img = synthetic::image(2, false, 64, 64);
  auto mse = [&](int q) {
    const auto out = decode_image(encode_jpeg(img, q));
    EXPECT_EQ(out.width, img.width);
    EXPECT_EQ(out.height, img.height);
    EXPECT_EQ(out.channels, img.channels);
    double s = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      const double d = double(out.pixels[i]) - double(img.pixels[i]);
      s += d * d;
    }
    return s / double(img.pixels.size());
  };
  const double e90 = mse(90), e70 = mse(70), e50 = mse(50);
  EXPECT_LT(e90, e70);
  EXPECT_LT(e70, e50);
  EXPECT_THROW(encode_jpeg(img, 0), ImageError);
}

TEST(Image, BlurProperties) {
  const Image flat(20, 10, 3, 123);
  EXPECT_EQ(gaussian_blur(flat, 2.0), flat);
  const auto img = synthetic::image(3, true);
  EXPECT_EQ(gaussian_blur(img, 0.0), img);
  auto variance = [](const Image& im) {
    double m = 0, v = 0;
    for (auto p : im.pixels) m += p;
    m /= double(im.pixels.size());
    for (auto p : im.pixels) v += (p - m) * (p - m);
    return v / double(im.pixels.size());
  };
  EXPECT_LT(variance(gaussian_blur(img, 1.0)), variance(img));
  EXPECT_LT(variance(gaussian_blur(img, 2.0)), variance(gaussian_blur(img, 1.0)));
  const auto r = resize_bilinear(img, 24, 20);
  EXPECT_EQ(r.width, 24);
  EXPECT_EQ(r.height, 20);
  EXPECT_EQ(resize_bilinear(img, img.width, img.height), img);
}

TEST(Robustness, GridAndIdentityRow) {
  const auto grid = default_grid();
  ASSERT_EQ(grid.size(), 6u);
  EXPECT_EQ(grid[0].label(), "original");
  EXPECT_EQ(Perturbation::parse("jpeg:70"), (Perturbation{PerturbKind::kJpeg, 70}));
  EXPECT_EQ(Perturbation::parse("blur:1").label(), "blur:1");
  EXPECT_THROW(Perturbation::parse("jpeg:0"), std::invalid_argument);
  EXPECT_THROW(Perturbation::parse("rotate:5"), std::invalid_argument);

  const auto m = synthetic::manifest(4, 40, 0);
  const ImageLoader load = [](const ManifestRecord& r) {
    return synthetic::image(std::hash<std::string>{}(r.id), r.label == Verdict::kFake);
  };
  const ImageDetector bright = [](const ManifestRecord&, const Image& img) {
    double s = 0;
    for (auto p : img.pixels) s += p;
    return s / double(img.pixels.size()) > 130 ? Verdict::kFake : Verdict::kReal;
  };
  const auto table = run_robustness(m, load, bright, grid);
  ASSERT_EQ(table.rows.size(), 6u);
  const Detector plain = [&](const ManifestRecord& r) { return bright(r, load(r)); };
  EXPECT_EQ(table.rows[0].report, evaluate(m, plain));
  for (const auto& row : table.rows) EXPECT_EQ(row.errors, 0);
  const ImageLoader broken = [](const ManifestRecord&) -> Image { throw ImageError("missing"); };
  const auto bad = run_robustness(m, broken, bright, grid);
  EXPECT_EQ(bad.rows[0].errors, 40);
}
