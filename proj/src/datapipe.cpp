#include "patternrl/datapipe.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "patternrl/judges.hpp"
#include "patternrl/log.hpp"
#include "patternrl/prompts.hpp"
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

Taxonomy::Taxonomy(std::vector<Abnormality> items) : items_(std::move(items)) {
  std::set<std::string> seen;
  for (const auto& a : items_) {
    if (trim(a.name).empty()) throw std::invalid_argument("taxonomy entry with empty name");
    if (!seen.insert(lower(a.name)).second) {
      throw std::invalid_argument("duplicate taxonomy entry: " + a.name);
    }
  }
}

// Entries other than the first two and the last are stand-in names; callers
// with the full list can construct their own Taxonomy.
const Taxonomy& Taxonomy::standard() {
  using C = AbnormalityCategory;
  static const Taxonomy t({
      {"Color Difference", C::kPerceptible},
      {"Structure Abnormal", C::kPerceptible},
      {"Blending Boundary", C::kPerceptible},
      {"Asymmetric Accessories", C::kPerceptible},
      {"Irregular Teeth", C::kPerceptible},
      {"Edge Abnormal", C::kSubtle},
      {"Over-smoothed Skin", C::kSubtle},
      {"Repetitive Texture", C::kSubtle},
      {"Blurry Fine Details", C::kSubtle},
      {"Inconsistent Noise", C::kSubtle},
      {"Non-physically Plausible Lighting and shadow", C::kCognitive},
      {"Inconsistent Specular Reflection", C::kCognitive},
      {"Implausible Background Geometry", C::kCognitive},
      {"Abnormal Optical Focus Discrepancy", C::kCognitive},
  });
  return t;
}

std::optional<std::size_t> Taxonomy::index_of(std::string_view name) const {
  const std::string key = lower(trim(name));
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (lower(items_[i].name) == key) return i;
  }
  return std::nullopt;
}

std::string Taxonomy::render(std::optional<AbnormalityCategory> category) const {
  std::string out;
  for (const auto& a : items_) {
    if (category && a.category != *category) continue;
    if (!out.empty()) out += "\n";
    out += "- " + a.name;
  }
  return out;
}

std::vector<std::size_t> parse_ballot(std::string_view reply, const Taxonomy& taxonomy) {
  std::vector<std::size_t> picks;
  std::size_t start = 0;
  while (start <= reply.size()) {
    std::size_t end = reply.find_first_of(",\n", start);
    if (end == std::string_view::npos) end = reply.size();
    std::string_view item = trim(reply.substr(start, end - start));
    while (!item.empty() && (item.front() == '-' || item.front() == '*')) {
      item = trim(item.substr(1));
    }
    if (const auto idx = taxonomy.index_of(item)) {
      if (std::find(picks.begin(), picks.end(), *idx) == picks.end()) picks.push_back(*idx);
    }
    start = end + 1;
  }
  return picks;
}

VoteResult tally_votes(std::span<const std::string> replies, const Taxonomy& taxonomy,
                       const VoteOptions& options) {
  VoteResult r;
  r.tally.assign(taxonomy.items().size(), 0);
  for (const auto& reply : replies) {
    for (const std::size_t idx : parse_ballot(reply, taxonomy)) ++r.tally[idx];
    ++r.ballots;
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < r.tally.size(); ++i) {
    if (r.tally[i] > options.threshold) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.tally[a] > r.tally[b]; });
  if (order.size() > static_cast<std::size_t>(options.top_k)) order.resize(options.top_k);
  for (const std::size_t i : order) r.selected.push_back(taxonomy.items()[i].name);
  r.flagged = r.selected.size() < static_cast<std::size_t>(options.top_k);
  return r;
}

std::string render_stage1_prompt(const ImageItem& item, const Taxonomy& taxonomy) {
  std::string forgery = item.forgery_type;
  if (!item.forgery_explanation.empty()) forgery += " (" + item.forgery_explanation + ")";
  return render_template(prompts::stage1(), {{"real image", item.real_ref},
                                             {"fake image", item.image_ref},
                                             {"Forgery Type and Explanation", forgery},
                                             {"Abnormality List", taxonomy.render()}});
}

VoteResult stage1_vote(const ImageItem& item, std::span<TextClient* const> annotators,
                       const Taxonomy& taxonomy, const VoteOptions& options) {
  if (annotators.empty()) throw std::invalid_argument("stage1_vote needs annotators");
  if (options.samples_per_annotator < 1) {
    throw std::invalid_argument("samples_per_annotator must be >= 1");
  }
  TextRequest req;
  req.prompt = render_stage1_prompt(item, taxonomy);
  if (!item.image_ref.empty()) req.image_ref = item.image_ref;

  std::vector<std::string> replies;
  int failed = 0;
  for (TextClient* a : annotators) {
    for (int s = 0; s < options.samples_per_annotator; ++s) {
      try {
        replies.push_back(a->complete(req));
      } catch (const ClientError& e) {
        ++failed;
        replies.emplace_back();
        log_warning("stage-1 annotator call failed for " + item.image_id + ": " + e.what());
      }
    }
  }
  VoteResult r = tally_votes(replies, taxonomy, options);
  r.failed_calls = failed;
  return r;
}

std::string render_stage2_prompt(const ImageItem& item, std::span<const std::string> abnormalities,
                                 const Taxonomy& taxonomy) {
  std::string forgery = item.forgery_type;
  if (!item.forgery_explanation.empty()) forgery += " (" + item.forgery_explanation + ")";
  std::string results;
  for (std::size_t i = 0; i < abnormalities.size(); ++i) {
    if (i) results += "\n";
    results += std::to_string(i + 1) + ". " + abnormalities[i];
  }
  return render_template(
      prompts::stage2(),
      {{"image", item.image_ref},
       {"Perceptible Types", taxonomy.render(AbnormalityCategory::kPerceptible)},
       {"Subtle Types", taxonomy.render(AbnormalityCategory::kSubtle)},
       {"Cognitive Types", taxonomy.render(AbnormalityCategory::kCognitive)},
       {"Forgery Type and Explanation", forgery},
       {"Stage-1 Results", results}});
}

std::string stage2_forensics(const ImageItem& item, std::span<const std::string> abnormalities,
                             TextClient& annotator, const Taxonomy& taxonomy, int max_attempts) {
  if (abnormalities.size() != 2) {
    throw std::invalid_argument("stage 2 needs exactly two abnormalities, got " +
                                std::to_string(abnormalities.size()));
  }
  TextRequest req;
  req.prompt = render_stage2_prompt(item, abnormalities, taxonomy);
  if (!item.image_ref.empty()) req.image_ref = item.image_ref;
  std::string problem = "empty response";
  for (int i = 0; i < std::max(1, max_attempts); ++i) {
    try {
      std::string text = annotator.complete(req);
      if (!trim(text).empty()) return text;
      problem = "empty response";
    } catch (const ClientError& e) {
      problem = e.what();
    }
  }
  throw AnnotationError("stage 2 failed for " + item.image_id + ": " + problem);
}

Stage2Sections split_stage2(std::string_view text) {
  // Marker positions: a line whose first non-blank characters are "k.".
  std::array<std::size_t, 3> pos{std::string_view::npos, std::string_view::npos,
                                 std::string_view::npos};
  std::size_t line_start = 0;
  int next = 0;
  while (line_start < text.size() && next < 3) {
    std::size_t p = line_start;
    while (p < text.size() && (text[p] == ' ' || text[p] == '\t')) ++p;
    if (p + 1 < text.size() && text[p] == static_cast<char>('1' + next) && text[p + 1] == '.' &&
        (p + 2 >= text.size() || !std::isdigit(static_cast<unsigned char>(text[p + 2])))) {
      pos[next++] = p;
    }
    const std::size_t nl = text.find('\n', line_start);
    if (nl == std::string_view::npos) break;
    line_start = nl + 1;
  }
  Stage2Sections s;
  if (next < 3) {
    s.forensics = std::string(trim(text));
    return s;
  }
  auto body = [&](int k) {
    const std::size_t from = pos[k] + 2;
    const std::size_t to = k + 1 < 3 ? pos[k + 1] : text.size();
    return std::string(trim(text.substr(from, to - from)));
  };
  s.initial = body(0);
  s.forensics = body(1);
  s.conclusion = body(2);
  return s;
}

std::string render_stage3_prompt(std::string_view forensic_text) {
  const Stage2Sections s = split_stage2(forensic_text);
  return render_template(prompts::stage3(),
                         {{"Initial Judgement from Stage-2", s.initial},
                          {"Forensics Analysis from Stage-2", s.forensics},
                          {"Conclusion from Stage-2", s.conclusion}});
}

Stage3Result stage3_patternize(std::string_view forensic_text, Verdict truth,
                               TextClient& rewriter, int max_attempts) {
  if (trim(forensic_text).empty()) throw std::invalid_argument("stage 3 needs stage-2 text");
  TextRequest req;
  req.prompt = render_stage3_prompt(forensic_text);
  Stage3Result r;
  for (int i = 0; i < std::max(1, max_attempts); ++i) {
    ++r.attempts;
    std::string reply;
    try {
      reply = rewriter.complete(req);
    } catch (const ClientError& e) {
      r.drop_reason = std::string("rewriter error: ") + e.what();
      continue;
    }
    ReasoningTrace trace;
    try {
      trace = parse_trace(reply);
    } catch (const TraceParseError& e) {
      r.drop_reason = std::string("unparseable trace: ") + e.what();
      continue;
    }
    if (!validate_format(trace)) {
      r.drop_reason = "invalid pattern sequence";
      continue;
    }
    const auto v = try_extract_verdict(trace);
    if (!v || *v != truth) {
      r.drop_reason = "conclusion contradicts ground truth";
      return r;
    }
    r.trace = std::move(trace);
    r.drop_reason.clear();
    return r;
  }
  return r;
}

// ---------------------------------------------------------------------------

std::string_view record_status_name(RecordStatus s) {
  switch (s) {
    case RecordStatus::kOk: return "ok";
    case RecordStatus::kFlagged: return "flagged";
    case RecordStatus::kDropped: return "dropped";
  }
  return "?";
}

namespace {

RecordStatus record_status_from_name(std::string_view s) {
  if (s == "ok") return RecordStatus::kOk;
  if (s == "flagged") return RecordStatus::kFlagged;
  if (s == "dropped") return RecordStatus::kDropped;
  throw std::invalid_argument("unknown record status: " + std::string(s));
}

}  // namespace

RecordStore::RecordStore(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      StoreRecord r;
      r.image_id = j.at("image_id").get<std::string>();
      r.stage = j.at("stage").get<int>();
      r.payload = j.at("payload").get<std::map<std::string, std::string>>();
      r.status = record_status_from_name(j.at("status").get<std::string>());
      records_[{r.image_id, r.stage}] = std::move(r);
    } catch (const std::exception& e) {
      throw AnnotationError(path_.string() + ":" + std::to_string(line_no) +
                            ": bad store record: " + e.what());
    }
  }
}

std::optional<StoreRecord> RecordStore::get(const std::string& image_id, int stage) const {
  std::lock_guard lock(mu_);
  auto it = records_.find({image_id, stage});
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void RecordStore::put(const StoreRecord& record) {
  nlohmann::ordered_json j;
  j["image_id"] = record.image_id;
  j["stage"] = record.stage;
  j["payload"] = record.payload;
  j["status"] = record_status_name(record.status);
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw AnnotationError("cannot append to record store " + path_.string());
  out << j.dump() << "\n";
  out.flush();
  records_[{record.image_id, record.stage}] = record;
}

std::vector<StoreRecord> RecordStore::records() const {
  std::lock_guard lock(mu_);
  std::vector<StoreRecord> out;
  out.reserve(records_.size());
  for (const auto& [_, r] : records_) out.push_back(r);
  return out;
}

namespace {

enum class Outcome { kAccepted, kFlagged, kDropped };

Outcome annotate_one(const ImageItem& item, const AnnotatorSet& annotators,
                     const Taxonomy& taxonomy, RecordStore& store,
                     const AnnotationOptions& options) {
  // Stage 1.
  std::vector<std::string> picks;
  if (auto r1 = store.get(item.image_id, 1)) {
    if (r1->status != RecordStatus::kOk) return Outcome::kFlagged;
    picks = {r1->payload.at("first"), r1->payload.at("second")};
  } else {
    const VoteResult v = stage1_vote(item, annotators.voters, taxonomy, options.vote);
    StoreRecord rec{item.image_id, 1, {}, RecordStatus::kOk};
    std::string tally;
    for (std::size_t i = 0; i < v.tally.size(); ++i) {
      if (v.tally[i] == 0) continue;
      if (!tally.empty()) tally += "; ";
      tally += taxonomy.items()[i].name + "=" + std::to_string(v.tally[i]);
    }
    rec.payload["tally"] = tally;
    if (v.flagged) {
      rec.status = RecordStatus::kFlagged;
      rec.payload["reason"] = "fewer than " + std::to_string(options.vote.top_k) +
                              " abnormalities above the vote threshold";
      store.put(rec);
      return Outcome::kFlagged;
    }
    rec.payload["first"] = v.selected.at(0);
    rec.payload["second"] = v.selected.at(1);
    store.put(rec);
    picks = v.selected;
  }

  // Stage 2.
  std::string forensic;
  if (auto r2 = store.get(item.image_id, 2)) {
    if (r2->status != RecordStatus::kOk) return Outcome::kFlagged;
    forensic = r2->payload.at("text");
  } else {
    StoreRecord rec{item.image_id, 2, {}, RecordStatus::kOk};
    try {
      forensic = stage2_forensics(item, picks, *annotators.analyst, taxonomy,
                                  options.max_attempts);
      rec.payload["text"] = forensic;
      store.put(rec);
    } catch (const AnnotationError& e) {
      rec.status = RecordStatus::kFlagged;
      rec.payload["reason"] = e.what();
      store.put(rec);
      return Outcome::kFlagged;
    }
  }

  // Stage 3.
  if (auto r3 = store.get(item.image_id, 3)) {
    return r3->status == RecordStatus::kOk ? Outcome::kAccepted : Outcome::kDropped;
  }
  const Stage3Result s3 =
      stage3_patternize(forensic, item.label, *annotators.rewriter, options.max_attempts);
  StoreRecord rec{item.image_id, 3, {}, RecordStatus::kOk};
  rec.payload["attempts"] = std::to_string(s3.attempts);
  if (!s3.trace) {
    rec.status = RecordStatus::kDropped;
    rec.payload["reason"] = s3.drop_reason;
    store.put(rec);
    return Outcome::kDropped;
  }
  rec.payload["trace"] = serialize_trace(*s3.trace);
  rec.payload["label"] = std::string(verdict_name(item.label));
  store.put(rec);
  return Outcome::kAccepted;
}

}  // namespace

AnnotationSummary run_annotation(std::span<const ImageItem> items, const AnnotatorSet& annotators,
                                 const Taxonomy& taxonomy, RecordStore& store,
                                 const AnnotationOptions& options) {
  if (annotators.voters.empty() || annotators.analyst == nullptr ||
      annotators.rewriter == nullptr) {
    throw std::invalid_argument("annotation needs voters, an analyst and a rewriter");
  }
  std::vector<Outcome> outcomes(items.size());
  std::vector<char> resumed(items.size(), 0);
  parallel_for(items.size(), options.workers, [&](std::size_t i) {
    resumed[i] = store.get(items[i].image_id, 3).has_value();
    outcomes[i] = annotate_one(items[i], annotators, taxonomy, store, options);
  });
  AnnotationSummary s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    s.resumed += resumed[i];
    switch (outcomes[i]) {
      case Outcome::kAccepted: ++s.accepted; break;
      case Outcome::kFlagged: ++s.flagged; break;
      case Outcome::kDropped: ++s.dropped; break;
    }
  }
  return s;
}

namespace {

class StubAnnotator final : public TextClient {
 public:
  StubAnnotator(const Taxonomy& taxonomy, std::uint64_t seed)
      : taxonomy_(taxonomy), seed_(seed) {}

  std::string complete(const TextRequest& req) override {
    const std::string& p = req.prompt;
    Fnv1a h;
    h.add(req.image_ref.value_or(""));
    const std::uint64_t key = splitmix64(h.value() ^ seed_);
    if (p.find("Choose from the following list:") != std::string::npos) {
      const std::size_t n = taxonomy_.items().size();
      const std::size_t a = key % n;
      const std::size_t b = (a + 1 + (key >> 20) % (n - 1)) % n;
      return taxonomy_.items()[a].name + " , " + taxonomy_.items()[b].name;
    }
    if (p.find("### Preliminary Observation") != std::string::npos) {
      const std::string marker = "indicate the image is fake:\n";
      std::string findings;
      const auto at = p.find(marker);
      if (at != std::string::npos) {
        const auto end = p.find("\n\n", at + marker.size());
        findings = p.substr(at + marker.size(), end == std::string::npos
                                                      ? std::string::npos
                                                      : end - at - marker.size());
      }
      const bool obvious = (key & 1) != 0;
      return std::string("1. ") +
             (obvious ? "The image looks fake at first glance."
                      : "It is hard to judge at first glance.") +
             "\n2. Observed evidence:\n" + findings +
             "\n3. The evidence indicates the image is fake.\n";
    }
    if (p.find("### Extracted Evidence") != std::string::npos) {
      const std::string marker = "The extracted evidence of current sample is as follows:\n";
      const auto a = p.find(marker);
      std::string evidence = "visible artifacts";
      if (a != std::string::npos) {
        const auto from = a + marker.size();
        const auto to = p.find("\n3. Conclusion", from);
        evidence = std::string(trim(p.substr(from, to == std::string::npos ? 0 : to - from)));
        std::replace(evidence.begin(), evidence.end(), '\n', ' ');
        if (evidence.empty()) evidence = "visible artifacts";
      }
      const bool hard = p.find("hard to judge") != std::string::npos;
      std::string out = "<fast>";
      out += hard ? "This image needs a closer look." : "This image appears fake.";
      out += "</fast>";
      if (hard) out += "<planning>Inspect structure, then texture, then physics.</planning>";
      out += "<reasoning>" + evidence + "</reasoning>";
      if (hard) out += "<reflection>But wait, the fine details also disagree.</reflection>";
      out += "<conclusion>The image is fake.</conclusion>";
      return out;
    }
    throw ClientError("stub annotator: unrecognized prompt");
  }

 private:
  const Taxonomy& taxonomy_;
  std::uint64_t seed_;
};

}  // namespace

std::shared_ptr<TextClient> make_stub_annotator(const Taxonomy& taxonomy, std::uint64_t seed) {
  return std::make_shared<StubAnnotator>(taxonomy, seed);
}

// ---------------------------------------------------------------------------

std::string_view reject_kind_name(RejectKind k) { return k == RejectKind::kPhi ? "phi" : "psi"; }

PairBuildResult build_mipo_pairs(std::span<const CandidateOutput> candidates,
                                 const std::map<std::string, std::string>& expert_traces,
                                 TextClient& judge, int threshold, int judge_attempts) {
  PairBuildResult out;
  for (const auto& c : candidates) {
    auto expert = expert_traces.find(c.image_id);
    if (expert == expert_traces.end()) {
      ++out.stats.missing_expert;
      continue;
    }
    std::optional<Verdict> v;
    try {
      v = try_extract_verdict(parse_trace(c.text));
    } catch (const TraceParseError&) {
      ++out.stats.unparseable;
      continue;
    }
    PreferencePair pair{c.image_id, c.image_ref, c.truth, expert->second, c.text,
                        RejectKind::kPsi, 0};
    if (!v || *v != c.truth) {
      ++out.stats.psi;
      out.pairs.push_back(std::move(pair));
      continue;
    }
    ScoreOptions so;
    so.max_attempts = judge_attempts;
    so.image_ref = c.image_ref;
    const int score = score_trace(c.text, c.truth, judge, so);
    if (score < threshold) {
      pair.kind = RejectKind::kPhi;
      pair.judge_score = score;
      ++out.stats.phi;
      out.pairs.push_back(std::move(pair));
    } else {
      ++out.stats.discarded;
    }
  }
  return out;
}

bool verify_pair(const PreferencePair& pair, int threshold) {
  auto verdict_of = [](const std::string& text) -> std::optional<Verdict> {
    try {
      return try_extract_verdict(parse_trace(text));
    } catch (const TraceParseError&) {
      return std::nullopt;
    }
  };
  const auto w = verdict_of(pair.chosen);
  if (!w || *w != pair.truth) return false;
  const auto l = verdict_of(pair.rejected);
  const bool rejected_right = l && *l == pair.truth;
  if (pair.kind == RejectKind::kPsi) return !rejected_right;
  return rejected_right && pair.judge_score >= 1 && pair.judge_score < threshold;
}

std::vector<std::string> provenance_violations(std::span<const PreferencePair> pairs,
                                               const std::set<std::string>& train_ids) {
  std::vector<std::string> bad;
  for (const auto& p : pairs) {
    if (!train_ids.count(p.image_id)) bad.push_back(p.image_id);
  }
  return bad;
}

void require_provenance(std::span<const PreferencePair> pairs,
                        const std::set<std::string>& train_ids) {
  const auto bad = provenance_violations(pairs, train_ids);
  if (!bad.empty()) {
    throw ProvenanceError("preference pair image not in the training manifest: " + bad.front() +
                          (bad.size() > 1 ? " (+" + std::to_string(bad.size() - 1) + " more)"
                                          : std::string()));
  }
}

}  // namespace patternrl
