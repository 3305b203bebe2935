#include "patternrl/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "patternrl/util.hpp"

namespace patternrl {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kId: return "id";
    case Split::kCrossModel: return "cross_model";
    case Split::kCrossForgery: return "cross_forgery";
    case Split::kCrossDomain: return "cross_domain";
  }
  return "?";
}

std::optional<Split> split_from_name(std::string_view name) {
  const std::string n = lower(name);
  for (Split s : {Split::kTrain, Split::kId, Split::kCrossModel, Split::kCrossForgery,
                  Split::kCrossDomain}) {
    if (n == split_name(s)) return s;
  }
  return std::nullopt;
}

bool is_training_forgery_type(std::string_view type) {
  const std::string t = lower(trim(type));
  return t == "fs" || t == "fr" || t == "efg";
}

std::vector<ManifestRecord> parse_manifest(std::string_view text) {
  std::vector<ManifestRecord> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = trim(text.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      return ManifestError("manifest line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw fail("expected an object");
    auto str = [&](const char* key, bool required) -> std::string {
      auto it = j.find(key);
      if (it == j.end() || it->is_null()) {
        if (required) throw fail(std::string("missing field \"") + key + "\"");
        return {};
      }
      if (!it->is_string()) throw fail(std::string("field \"") + key + "\" must be a string");
      return it->get<std::string>();
    };
    ManifestRecord r;
    r.id = str("id", true);
    if (trim(r.id).empty()) throw fail("empty id");
    r.path = str("path", true);
    const std::string label = str("label", true);
    const auto v = verdict_from_name(label);
    if (!v) throw fail("label must be real or fake, got \"" + label + "\"");
    r.label = *v;
    const std::string split = str("split", true);
    const auto s = split_from_name(split);
    if (!s) throw fail("unknown split \"" + split + "\"");
    r.split = *s;
    r.subset = str("subset", r.split != Split::kTrain);
    r.source = str("source", false);
    r.forgery_type = str("forgery_type", false);
    if (r.split != Split::kTrain && trim(r.subset).empty()) throw fail("empty subset");
    if (r.split == Split::kTrain && r.label == Verdict::kFake &&
        !is_training_forgery_type(r.forgery_type)) {
      throw fail("training fake \"" + r.id + "\" has forgery type \"" + r.forgery_type +
                 "\"; training admits only FS, FR and EFG");
    }
    out.push_back(std::move(r));
  }
  check_manifest(out);
  return out;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_manifest(ss.str());
  } catch (const LeakageError& e) {
    throw LeakageError(path.string() + ": " + e.what());
  } catch (const ManifestError& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
}

void check_leakage(std::span<const ManifestRecord> train, std::span<const ManifestRecord> eval) {
  std::set<std::string> ids;
  std::set<std::string> paths;
  for (const auto& r : train) {
    if (r.split != Split::kTrain) continue;
    ids.insert(r.id);
    if (!r.path.empty()) paths.insert(r.path);
  }
  for (const auto& r : eval) {
    if (r.split == Split::kTrain) continue;
    if (ids.count(r.id)) {
      throw LeakageError("leakage: id \"" + r.id + "\" is in TRAIN and in " +
                         std::string(split_name(r.split)));
    }
    if (!r.path.empty() && paths.count(r.path)) {
      throw LeakageError("leakage: path \"" + r.path + "\" is in TRAIN and in " +
                         std::string(split_name(r.split)) + " (id \"" + r.id + "\")");
    }
  }
}

void check_manifest(std::span<const ManifestRecord> records) {
  check_leakage(records, records);
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw ManifestError("duplicate id \"" + r.id + "\"");
    if (r.split == Split::kTrain && r.label == Verdict::kFake &&
        !is_training_forgery_type(r.forgery_type)) {
      throw ManifestError("training fake \"" + r.id + "\" has forgery type \"" +
                          r.forgery_type + "\"; training admits only FS, FR and EFG");
    }
  }
}

std::string manifest_to_jsonl(std::span<const ManifestRecord> records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["path"] = r.path;
    j["label"] = verdict_name(r.label);
    j["split"] = split_name(r.split);
    j["subset"] = r.subset;
    j["source"] = r.source;
    j["forgery_type"] = r.forgery_type;
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

double Confusion::accuracy() const {
  const long n = total();
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

double Confusion::precision() const {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double Confusion::recall() const {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

SplitReport summarize(std::vector<SubsetMetrics> subsets) {
  std::sort(subsets.begin(), subsets.end(), [](const SubsetMetrics& a, const SubsetMetrics& b) {
    return std::tie(a.split, a.subset) < std::tie(b.split, b.subset);
  });
  SplitReport rep;
  std::map<Split, std::pair<double, int>> sums;
  for (const auto& s : subsets) {
    auto& [sum, n] = sums[s.split];
    sum += s.accuracy;
    ++n;
  }
  for (const auto& [split, sn] : sums) rep.split_average[split] = sn.first / sn.second;

  double total = 0.0;
  int terms = 0;
  if (auto it = rep.split_average.find(Split::kId); it != rep.split_average.end()) {
    total += it->second;
    ++terms;
  }
  for (const auto& s : subsets) {
    if (s.split == Split::kId) continue;
    total += s.accuracy;
    ++terms;
  }
  rep.overall_average = terms == 0 ? 0.0 : total / terms;
  rep.subsets = std::move(subsets);
  return rep;
}

SplitReport evaluate(std::span<const ManifestRecord> records, const Detector& detector,
                     const EvalOptions& options) {
  std::vector<std::optional<Verdict>> predictions(records.size());
  parallel_for(records.size(), options.workers, [&](std::size_t i) {
    if (records[i].split == Split::kTrain) return;
    try {
      predictions[i] = detector(records[i]);
    } catch (const std::exception&) {
      predictions[i].reset();
    }
  });

  std::map<std::pair<Split, std::string>, Confusion> counts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.split == Split::kTrain) continue;
    Confusion& c = counts[{r.split, r.subset}];
    const bool fake = r.label == Verdict::kFake;
    if (!predictions[i]) {
      ++c.abstained;
      if (options.abstention == AbstentionPolicy::kWrong) ++(fake ? c.fn : c.fp);
      continue;
    }
    const bool said_fake = *predictions[i] == Verdict::kFake;
    if (fake && said_fake) ++c.tp;
    if (fake && !said_fake) ++c.fn;
    if (!fake && said_fake) ++c.fp;
    if (!fake && !said_fake) ++c.tn;
  }
  std::vector<SubsetMetrics> subsets;
  for (const auto& [key, c] : counts) {
    SubsetMetrics m;
    m.split = key.first;
    m.subset = key.second;
    m.counts = c;
    m.accuracy = c.accuracy();
    m.precision = c.precision();
    m.recall = c.recall();
    subsets.push_back(std::move(m));
  }
  return summarize(std::move(subsets));
}

std::string report_to_jsonl(const SplitReport& report, std::string_view label) {
  std::string out;
  for (const auto& s : report.subsets) {
    nlohmann::ordered_json j;
    if (!label.empty()) j["perturbation"] = label;
    j["kind"] = "subset";
    j["split"] = split_name(s.split);
    j["subset"] = s.subset;
    j["accuracy"] = s.accuracy;
    j["precision"] = s.precision;
    j["recall"] = s.recall;
    j["tp"] = s.counts.tp;
    j["fp"] = s.counts.fp;
    j["fn"] = s.counts.fn;
    j["tn"] = s.counts.tn;
    j["abstained"] = s.counts.abstained;
    out += j.dump() + "\n";
  }
  for (const auto& [split, avg] : report.split_average) {
    nlohmann::ordered_json j;
    if (!label.empty()) j["perturbation"] = label;
    j["kind"] = "split_average";
    j["split"] = split_name(split);
    j["accuracy"] = avg;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json j;
  if (!label.empty()) j["perturbation"] = label;
  j["kind"] = "overall_average";
  j["accuracy"] = report.overall_average;
  out += j.dump() + "\n";
  return out;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

}  // namespace

std::string report_to_table(const SplitReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %-24s %7s %7s %7s %7s %5s\n", "split", "subset", "acc",
                "prec", "recall", "n", "abst");
  out += line;
  for (const auto& s : report.subsets) {
    std::snprintf(line, sizeof line, "%-14s %-24s %7s %7s %7s %7ld %5ld\n",
                  std::string(split_name(s.split)).c_str(), s.subset.c_str(),
                  pct(s.accuracy).c_str(), pct(s.precision).c_str(), pct(s.recall).c_str(),
                  s.counts.total(), s.counts.abstained);
    out += line;
  }
  for (const auto& [split, avg] : report.split_average) {
    std::snprintf(line, sizeof line, "%-14s %-24s %7s\n", std::string(split_name(split)).c_str(),
                  "(average)", pct(avg).c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "%-14s %-24s %7s\n", "overall", "(average)",
                pct(report.overall_average).c_str());
  out += line;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string Perturbation::label() const {
  switch (kind) {
    case PerturbKind::kIdentity: return "original";
    case PerturbKind::kJpeg: return "jpeg:" + short_num(value);
    case PerturbKind::kBlur: return "blur:" + short_num(value);
    case PerturbKind::kResize: return "resize:" + short_num(value);
  }
  return "?";
}

Perturbation Perturbation::parse(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "original" || t == "identity" || t == "none") return {};
  const auto colon = t.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("bad perturbation: " + t);
  const std::string kind = t.substr(0, colon);
  const std::string num = t.substr(colon + 1);
  double v = 0.0;
  const auto res = std::from_chars(num.data(), num.data() + num.size(), v);
  if (res.ec != std::errc() || res.ptr != num.data() + num.size()) {
    throw std::invalid_argument("bad perturbation value: " + t);
  }
  Perturbation p;
  p.value = v;
  if (kind == "jpeg") {
    if (v < 1 || v > 100 || v != std::floor(v)) throw std::invalid_argument("JPEG QF must be 1..100");
    p.kind = PerturbKind::kJpeg;
  } else if (kind == "blur") {
    if (v < 0) throw std::invalid_argument("blur sigma must be >= 0");
    p.kind = PerturbKind::kBlur;
  } else if (kind == "resize") {
    if (!(v > 0)) throw std::invalid_argument("resize scale must be > 0");
    p.kind = PerturbKind::kResize;
  } else {
    throw std::invalid_argument("unknown perturbation kind: " + kind);
  }
  return p;
}

Image perturb(const Image& img, const Perturbation& p) {
  switch (p.kind) {
    case PerturbKind::kIdentity: return img;
    case PerturbKind::kJpeg:
      return decode_image(encode_jpeg(img, static_cast<int>(std::lround(p.value))));
    case PerturbKind::kBlur: return gaussian_blur(img, p.value);
    case PerturbKind::kResize: {
      if (!(p.value > 0.0)) throw ImageError("resize scale must be > 0");
      const int w = std::max(1, static_cast<int>(std::lround(img.width * p.value)));
      const int h = std::max(1, static_cast<int>(std::lround(img.height * p.value)));
      return resize_bilinear(resize_bilinear(img, w, h), img.width, img.height);
    }
  }
  throw ImageError("unknown perturbation");
}

std::vector<Perturbation> default_grid() {
  return {{PerturbKind::kIdentity, 0.0}, {PerturbKind::kJpeg, 90.0}, {PerturbKind::kJpeg, 70.0},
          {PerturbKind::kJpeg, 50.0},    {PerturbKind::kBlur, 1.0},  {PerturbKind::kBlur, 2.0}};
}

RobustnessTable run_robustness(std::span<const ManifestRecord> records, const ImageLoader& load,
                               const ImageDetector& detector,
                               std::span<const Perturbation> grid, const EvalOptions& options) {
  if (grid.empty()) throw std::invalid_argument("empty perturbation grid");
  RobustnessTable table;
  for (const auto& p : grid) {
    std::atomic<long> errors{0};
    const Detector wrapped = [&](const ManifestRecord& r) {
      Image img;
      try {
        img = perturb(load(r), p);
      } catch (const std::exception&) {
        ++errors;
        throw;
      }
      return detector(r, img);
    };
    RobustnessRow row;
    row.perturbation = p;
    row.report = evaluate(records, wrapped, options);
    row.errors = errors.load();
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string RobustnessTable::to_jsonl() const {
  std::string out;
  for (const auto& row : rows) {
    out += report_to_jsonl(row.report, row.perturbation.label());
    nlohmann::ordered_json j;
    j["perturbation"] = row.perturbation.label();
    j["kind"] = "errors";
    j["count"] = row.errors;
    out += j.dump() + "\n";
  }
  return out;
}

std::string RobustnessTable::to_table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s", "split");
  out += line;
  for (const auto& row : rows) {
    std::snprintf(line, sizeof line, " %12s", row.perturbation.label().c_str());
    out += line;
  }
  out += "\n";
  std::set<Split> splits;
  for (const auto& row : rows) {
    for (const auto& [s, _] : row.report.split_average) splits.insert(s);
  }
  for (const Split s : splits) {
    std::snprintf(line, sizeof line, "%-14s", std::string(split_name(s)).c_str());
    out += line;
    for (const auto& row : rows) {
      auto it = row.report.split_average.find(s);
      std::snprintf(line, sizeof line, " %12s",
                    it == row.report.split_average.end() ? "-" : pct(it->second).c_str());
      out += line;
    }
    out += "\n";
  }
  std::snprintf(line, sizeof line, "%-14s", "average");
  out += line;
  for (const auto& row : rows) {
    std::snprintf(line, sizeof line, " %12s", pct(row.report.overall_average).c_str());
    out += line;
  }
  out += "\n";
  return out;
}

}  // namespace patternrl
