#include "patternrl/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "patternrl/config.hpp"
#include "patternrl/datapipe.hpp"
#include "patternrl/judges.hpp"
#include "patternrl/protocol.hpp"
#include "patternrl/toy_task.hpp"
#include "patternrl/trainer.hpp"
#include "patternrl/util.hpp"

namespace patternrl::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Flag {
  std::string name;  // without the leading dashes
  std::string key;   // config key it overrides
  std::string help;
  bool multi = false;
};

struct Verb {
  std::string name;
  std::string help;
  std::vector<Flag> flags;
};

const std::vector<Verb>& verbs() {
  static const std::vector<Verb> v = {
      {"annotate", "Run the three-stage annotation pipeline over TRAIN fakes",
       {{"manifest", "data.manifest", "Manifest file"}}},
      {"build-pairs", "Build MiPO preference pairs from sampled outputs",
       {{"manifest", "data.manifest", "Training manifest (provenance check)"},
        {"candidates", "pairs.candidates", "Sampled SFT-model outputs (JSONL)"},
        {"experts", "pairs.experts", "Expert traces (JSONL, e.g. d1.jsonl)"}}},
      {"train-sft", "SFT stage on the toy task", {{"init", "train.init", "Initial snapshot"}}},
      {"train-mipo", "MiPO stage on the toy task", {{"init", "train.init", "SFT snapshot"}}},
      {"train-pgrpo", "P-GRPO stage on the toy task",
       {{"init", "train.init", "Cold-start snapshot"}}},
      {"evaluate", "Accuracy/precision/recall per subset and split",
       {{"manifest", "data.manifest", "Manifest file"},
        {"split", "eval.split", "Comma-separated splits to keep"},
        {"subset", "eval.subset", "Comma-separated subsets to keep"},
        {"detector", "detector.kind", "predictions|oracle|real|fake"},
        {"predictions", "detector.predictions", "Predictions file (JSONL id, verdict)"}}},
      {"robustness", "Evaluate under image perturbations",
       {{"manifest", "data.manifest", "Manifest file"},
        {"grid", "robustness.grid", "default, or comma list such as jpeg:90,blur:1"},
        {"detector", "detector.kind", "brightness|oracle|real|fake"}}},
      {"quality", "Rubric scores and pairwise ELO of reasoning traces",
       {{"samples", "quality.samples", "Samples file (JSONL id, image_ref, truth)"},
        {"model", "quality.models", "name=traces.jsonl (repeatable)", true}}},
      {"report", "Summarize the reports and ledgers in a directory",
       {{"in", "report.in", "Directory to summarize"}}},
  };
  return v;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    const std::string_view item = trim(std::string_view(s).substr(start, end - start));
    if (!item.empty()) out.emplace_back(item);
    start = end + 1;
  }
  return out;
}

Verdict parse_verdict(const std::string& s) {
  const auto v = verdict_from_name(s);
  if (!v) throw std::runtime_error("expected real or fake, got \"" + s + "\"");
  return *v;
}

// Everything a verb needs: resolved config, output directory, console.
struct Context {
  Config cfg;
  fs::path out_dir;
  std::ostream& out;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct Clients {
  std::shared_ptr<TextClient> base;
  std::shared_ptr<RecordingClient> recorder;
};

Clients make_client(const Config& cfg, const std::string& prefix) {
  const std::string mode = cfg.get(prefix + ".mode", "stub");
  std::shared_ptr<TextClient> base;
  if (mode == "stub") {
    base = prefix == "annotator" ? make_stub_annotator(Taxonomy::standard(),
                                                       static_cast<std::uint64_t>(
                                                           cfg.get_int("seed", 0)))
                                 : toy::stub_judge();
  } else if (mode == "http") {
    HttpClientConfig hc;
    hc.base_url = cfg.require(prefix + ".url");
    hc.path = cfg.get(prefix + ".path", hc.path);
    hc.token_env = cfg.get(prefix + ".token_env", "");
    hc.timeout_seconds = cfg.get_double(prefix + ".timeout", hc.timeout_seconds);
    hc.max_in_flight = static_cast<int>(cfg.get_int(prefix + ".max_in_flight", hc.max_in_flight));
    base = std::make_shared<HttpTextClient>(hc);
  } else {
    throw ConfigError(prefix + ".mode must be stub or http");
  }
  auto rec = std::make_shared<RecordingClient>(base);
  return {base, rec};
}

void write_transcripts(const fs::path& path, const RecordingClient& rec) {
  std::string out;
  for (const auto& t : rec.transcripts()) {
    nlohmann::ordered_json j;
    j["prompt"] = t.prompt;
    j["image"] = t.image_ref ? nlohmann::json(*t.image_ref) : nlohmann::json(nullptr);
    j["response"] = t.response;
    j["error"] = t.error;
    out += j.dump() + "\n";
  }
  write_text(path, out);
}

std::string forgery_description(const std::string& code) {
  std::string c = code;
  std::transform(c.begin(), c.end(), c.begin(), [](unsigned char ch) { return std::toupper(ch); });
  if (c == "FS") return "face swapping";
  if (c == "FR") return "face reenactment";
  if (c == "EFG") return "entire face generation";
  return code;
}

// ---------------------------------------------------------------------------

int run_annotate(Context& ctx) {
  const auto records = load_manifest(ctx.cfg.require("data.manifest"));
  std::string real_ref = ctx.cfg.get("annotate.real_ref", "");
  std::vector<ImageItem> items;
  for (const auto& r : records) {
    if (r.split != Split::kTrain) continue;
    if (r.label == Verdict::kReal) {
      if (real_ref.empty()) real_ref = r.path;
      continue;
    }
    ImageItem it;
    it.image_id = r.id;
    it.image_ref = r.path;
    it.label = r.label;
    it.forgery_type = forgery_description(r.forgery_type);
    items.push_back(std::move(it));
  }
  for (auto& it : items) it.real_ref = real_ref;

  Clients client = make_client(ctx.cfg, "annotator");
  const int voters = static_cast<int>(ctx.cfg.get_int("annotate.annotators", 3));
  if (voters < 1) throw ConfigError("annotate.annotators must be >= 1");
  AnnotatorSet set;
  for (int i = 0; i < voters; ++i) set.voters.push_back(client.recorder.get());
  set.analyst = client.recorder.get();
  set.rewriter = client.recorder.get();

  AnnotationOptions opt;
  opt.vote.samples_per_annotator =
      static_cast<int>(ctx.cfg.get_int("annotate.samples_per_annotator", 5));
  opt.vote.threshold = static_cast<int>(ctx.cfg.get_int("annotate.vote_threshold", 10));
  opt.max_attempts = static_cast<int>(ctx.cfg.get_int("annotate.max_attempts", 3));
  opt.workers = ctx.workers;

  RecordStore store(ctx.out_dir / "annotations.jsonl");
  const AnnotationSummary s = run_annotation(items, set, Taxonomy::standard(), store, opt);

  // Optional balancing: d1.quota.<forgery type> caps records per type.
  std::map<std::string, long long> quota;
  for (const auto& [type, v] : ctx.cfg.section("d1.quota.")) {
    std::size_t used = 0;
    long long n = -1;
    try {
      n = std::stoll(v, &used);
    } catch (const std::exception&) {
    }
    if (used != v.size() || n < 0) throw ConfigError("d1.quota." + type + " must be a count >= 0");
    quota[type] = n;
  }
  std::map<std::string, std::string> type_of;
  for (const auto& r : records) type_of[r.id] = r.forgery_type;
  std::map<std::string, long long> taken;
  long long capped = 0;

  std::string d1;
  for (const auto& r : store.records()) {
    if (r.stage != 3 || r.status != RecordStatus::kOk) continue;
    const std::string type = type_of.count(r.image_id) ? type_of[r.image_id] : "";
    if (auto q = quota.find(type); q != quota.end() && taken[type] >= q->second) {
      ++capped;
      continue;
    }
    ++taken[type];
    nlohmann::ordered_json j;
    j["image_id"] = r.image_id;
    j["forgery_type"] = type;
    j["label"] = r.payload.at("label");
    j["trace"] = r.payload.at("trace");
    d1 += j.dump() + "\n";
  }
  write_text(ctx.out_dir / "d1.jsonl", d1);
  write_transcripts(ctx.out_dir / "annotator_transcripts.jsonl", *client.recorder);
  nlohmann::ordered_json summary{{"accepted", s.accepted},
                                 {"flagged", s.flagged},
                                 {"dropped", s.dropped},
                                 {"resumed", s.resumed},
                                 {"quota_capped", capped}};
  write_text(ctx.out_dir / "annotate_summary.json", summary.dump(2) + "\n");
  ctx.out << "accepted " << s.accepted << ", flagged " << s.flagged << ", dropped " << s.dropped
          << ", resumed " << s.resumed << "\n";
  return kOk;
}

int run_build_pairs(Context& ctx) {
  const auto manifest = load_manifest(ctx.cfg.require("data.manifest"));
  std::set<std::string> train_ids;
  for (const auto& r : manifest) {
    if (r.split == Split::kTrain) train_ids.insert(r.id);
  }
  std::map<std::string, std::string> experts;
  for (const auto& j : read_jsonl(ctx.cfg.require("pairs.experts"))) {
    experts[j.at("image_id").get<std::string>()] = j.at("trace").get<std::string>();
  }
  std::vector<CandidateOutput> candidates;
  for (const auto& j : read_jsonl(ctx.cfg.require("pairs.candidates"))) {
    CandidateOutput c;
    c.image_id = j.at("image_id").get<std::string>();
    c.image_ref = j.value("image_ref", std::string());
    c.truth = parse_verdict(j.at("truth").get<std::string>());
    c.text = j.at("text").get<std::string>();
    candidates.push_back(std::move(c));
  }
  Clients judge = make_client(ctx.cfg, "judge");
  const int threshold = static_cast<int>(ctx.cfg.get_int("pairs.threshold", 4));
  const PairBuildResult built = build_mipo_pairs(candidates, experts, *judge.recorder, threshold);
  require_provenance(built.pairs, train_ids);

  std::string out;
  for (const auto& p : built.pairs) {
    nlohmann::ordered_json j;
    j["image_id"] = p.image_id;
    j["image_ref"] = p.image_ref;
    j["truth"] = verdict_name(p.truth);
    j["kind"] = reject_kind_name(p.kind);
    j["judge_score"] = p.judge_score;
    j["chosen"] = p.chosen;
    j["rejected"] = p.rejected;
    out += j.dump() + "\n";
  }
  write_text(ctx.out_dir / "pairs.jsonl", out);
  write_transcripts(ctx.out_dir / "judge_transcripts.jsonl", *judge.recorder);
  const auto& st = built.stats;
  nlohmann::ordered_json summary{{"psi", st.psi},
                                 {"phi", st.phi},
                                 {"discarded", st.discarded},
                                 {"missing_expert", st.missing_expert},
                                 {"unparseable", st.unparseable}};
  write_text(ctx.out_dir / "pairs_summary.json", summary.dump(2) + "\n");
  ctx.out << "pairs " << built.pairs.size() << " (psi " << st.psi << ", phi " << st.phi
          << "), discarded " << st.discarded << ", missing expert " << st.missing_expert << "\n";
  return kOk;
}

ToyPolicy initial_policy(const Context& ctx, const std::string& fallback_name) {
  const std::string init = ctx.cfg.get("train.init", "");
  if (!init.empty()) return ToyPolicy::load(init);
  const fs::path fallback = ctx.out_dir / fallback_name;
  if (!fallback_name.empty() && fs::exists(fallback)) return ToyPolicy::load(fallback);
  if (!fallback_name.empty()) {
    throw std::runtime_error("no initial snapshot: pass --init or run the previous stage into " +
                             ctx.out_dir.string());
  }
  return ToyPolicy();
}

void save_snapshot(const PolicySnapshot& snap, const fs::path& path) {
  const auto* toy = dynamic_cast<const ToyPolicy*>(snap.get());
  if (toy == nullptr) throw std::runtime_error("snapshot is not a toy policy");
  toy->save(path);
}

int run_train_sft(Context& ctx, const TrainConfig& tc) {
  ToyPolicy policy = initial_policy(ctx, "");
  const auto data = toy::make_sft_data(toy::sizes_from_config(ctx.cfg).sft, tc.seed);
  RunLedger ledger;
  const PolicySnapshot snap = train_sft(policy, data, tc.sft, tc.seed, ledger);
  save_snapshot(snap, ctx.out_dir / "sft.snap");
  ledger.write(ctx.out_dir / "ledger_sft.jsonl");
  const auto e = ledger.entries();
  ctx.out << "sft steps " << e.size() << ", loss " << e.front().loss << " -> " << e.back().loss
          << "\n";
  return kOk;
}

int run_train_mipo(Context& ctx, const TrainConfig& tc) {
  ToyPolicy policy = initial_policy(ctx, "sft.snap");
  const PolicySnapshot reference = policy.snapshot();
  Clients judge = make_client(ctx.cfg, "judge");
  const auto pairs = toy::make_preference_data(
      *reference, toy::sizes_from_config(ctx.cfg).pair_candidates, *judge.recorder, tc.seed);
  if (pairs.empty()) throw std::runtime_error("no preference pairs survived the filter");
  RunLedger ledger;
  const PolicySnapshot snap = train_mipo(policy, reference, pairs, tc.mipo, tc.seed, ledger);
  save_snapshot(snap, ctx.out_dir / "cold.snap");
  ledger.write(ctx.out_dir / "ledger_mipo.jsonl");
  write_transcripts(ctx.out_dir / "judge_transcripts.jsonl", *judge.recorder);
  const auto e = ledger.entries();
  ctx.out << "mipo pairs " << pairs.size() << ", steps " << e.size() << ", margin "
          << e.front().margin << " -> " << e.back().margin << "\n";
  return kOk;
}

int run_train_pgrpo(Context& ctx, const TrainConfig& tc) {
  ToyPolicy policy = initial_policy(ctx, "cold.snap");
  const PolicySnapshot cold = policy.snapshot();
  Clients judge = make_client(ctx.cfg, "judge");
  const RewardEngine engine(tc.pgrpo.reward, judge.recorder.get());
  const auto records = toy::make_rl_records(toy::sizes_from_config(ctx.cfg).rl, tc.seed);
  RunLedger ledger;
  const PgrpoResult res =
      train_pgrpo(policy, cold, records, engine, tc.pgrpo, tc.seed, ledger, ctx.workers);
  save_snapshot(res.final_policy, ctx.out_dir / "final.snap");
  ledger.write(ctx.out_dir / "ledger_pgrpo.jsonl");
  write_text(ctx.out_dir / "rollouts.jsonl", rollouts_to_jsonl(res.rollouts));
  write_transcripts(ctx.out_dir / "judge_transcripts.jsonl", *judge.recorder);

  const double acc = toy::heldout_accuracy(*res.final_policy, toy::all_observations());
  const auto e = ledger.entries();
  nlohmann::ordered_json summary{{"steps", res.steps},
                                 {"skipped_steps", res.skipped_steps},
                                 {"first_mean_reward", e.front().mean_reward},
                                 {"last_mean_reward", e.back().mean_reward},
                                 {"heldout_accuracy", acc},
                                 {"ledger_digest", hex64(ledger.digest())}};
  write_text(ctx.out_dir / "pgrpo_summary.json", summary.dump(2) + "\n");
  ctx.out << "pgrpo steps " << res.steps << " (skipped " << res.skipped_steps << "), reward "
          << e.front().mean_reward << " -> " << e.back().mean_reward << ", held-out accuracy "
          << acc << "\n";
  return kOk;
}

std::vector<ManifestRecord> filtered_records(const Context& ctx) {
  auto records = load_manifest(ctx.cfg.require("data.manifest"));
  const auto splits = split_list(ctx.cfg.get("eval.split", ""));
  const auto subsets = split_list(ctx.cfg.get("eval.subset", ""));
  std::set<Split> keep_split;
  for (const auto& s : splits) {
    const auto v = split_from_name(s);
    if (!v) throw UsageError("unknown split: " + s);
    keep_split.insert(*v);
  }
  const std::set<std::string> keep_subset(subsets.begin(), subsets.end());
  std::erase_if(records, [&](const ManifestRecord& r) {
    return (!keep_split.empty() && !keep_split.count(r.split)) ||
           (!keep_subset.empty() && !keep_subset.count(r.subset));
  });
  return records;
}

EvalOptions eval_options(const Context& ctx) {
  EvalOptions o;
  o.workers = ctx.workers;
  const std::string a = ctx.cfg.get("eval.abstention", "wrong");
  if (a == "wrong") {
    o.abstention = AbstentionPolicy::kWrong;
  } else if (a == "exclude") {
    o.abstention = AbstentionPolicy::kExclude;
  } else {
    throw ConfigError("eval.abstention must be wrong or exclude");
  }
  return o;
}

int run_evaluate(Context& ctx) {
  const auto records = filtered_records(ctx);
  const std::string kind = ctx.cfg.get("detector.kind", "predictions");
  Detector detector;
  if (kind == "predictions") {
    auto preds = std::make_shared<std::map<std::string, Verdict>>();
    for (const auto& j : read_jsonl(ctx.cfg.require("detector.predictions"))) {
      (*preds)[j.at("id").get<std::string>()] = parse_verdict(j.at("verdict").get<std::string>());
    }
    detector = [preds](const ManifestRecord& r) { return preds->at(r.id); };
  } else if (kind == "oracle") {
    detector = [](const ManifestRecord& r) { return r.label; };
  } else if (kind == "real" || kind == "fake") {
    const Verdict v = parse_verdict(kind);
    detector = [v](const ManifestRecord&) { return v; };
  } else {
    throw ConfigError("detector.kind must be predictions, oracle, real or fake for evaluate");
  }
  const SplitReport rep = evaluate(records, detector, eval_options(ctx));
  write_text(ctx.out_dir / "report.jsonl", report_to_jsonl(rep));
  const std::string table = report_to_table(rep);
  write_text(ctx.out_dir / "report.txt", table);
  ctx.out << table;
  return kOk;
}

int run_robustness_verb(Context& ctx) {
  const auto records = filtered_records(ctx);
  const fs::path manifest_dir = fs::path(ctx.cfg.require("data.manifest")).parent_path();
  const fs::path root = ctx.cfg.get("data.image_root", manifest_dir.string());
  const ImageLoader loader = [root](const ManifestRecord& r) {
    const fs::path p(r.path);
    return read_image(p.is_absolute() ? p : root / p);
  };
  const std::string kind = ctx.cfg.get("detector.kind", "brightness");
  ImageDetector detector;
  if (kind == "brightness") {
    const double threshold = ctx.cfg.get_double("detector.threshold", 127.5);
    detector = [threshold](const ManifestRecord&, const Image& img) {
      double s = 0.0;
      for (const auto v : img.pixels) s += v;
      return s / static_cast<double>(img.pixels.size()) > threshold ? Verdict::kFake
                                                                    : Verdict::kReal;
    };
  } else if (kind == "oracle") {
    detector = [](const ManifestRecord& r, const Image&) { return r.label; };
  } else if (kind == "real" || kind == "fake") {
    const Verdict v = parse_verdict(kind);
    detector = [v](const ManifestRecord&, const Image&) { return v; };
  } else {
    throw ConfigError("detector.kind must be brightness, oracle, real or fake for robustness");
  }
  std::vector<Perturbation> grid;
  const std::string g = ctx.cfg.get("robustness.grid", "default");
  if (g == "default") {
    grid = default_grid();
  } else {
    for (const auto& item : split_list(g)) {
      try {
        grid.push_back(Perturbation::parse(item));
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
  }
  const RobustnessTable table = run_robustness(records, loader, detector, grid, eval_options(ctx));
  write_text(ctx.out_dir / "robustness.jsonl", table.to_jsonl());
  const std::string text = table.to_table();
  write_text(ctx.out_dir / "robustness.txt", text);
  ctx.out << text;
  return kOk;
}

int run_quality(Context& ctx) {
  std::vector<QualitySample> samples;
  for (const auto& j : read_jsonl(ctx.cfg.require("quality.samples"))) {
    samples.push_back({j.at("id").get<std::string>(), j.value("image_ref", std::string()),
                       parse_verdict(j.at("truth").get<std::string>())});
  }
  std::vector<ModelTraces> models;
  for (const auto& spec : split_list(ctx.cfg.require("quality.models"))) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("--model expects name=path, got " + spec);
    ModelTraces m;
    m.model = spec.substr(0, eq);
    for (const auto& j : read_jsonl(spec.substr(eq + 1))) {
      m.traces[j.at("id").get<std::string>()] = j.at("trace").get<std::string>();
    }
    models.push_back(std::move(m));
  }
  Clients judge = make_client(ctx.cfg, "judge");
  QualityOptions opt;
  opt.seed = ctx.seed;
  opt.workers = ctx.workers;
  opt.elo_k = ctx.cfg.get_double("quality.elo_k", 32.0);
  opt.elo_initial = ctx.cfg.get_double("quality.elo_initial", 1000.0);
  const QualityReport rep = run_quality_eval(
      samples, models, {{ctx.cfg.get("quality.judge_name", "judge"), judge.recorder.get()}}, opt);
  write_text(ctx.out_dir / "quality.jsonl", rep.to_jsonl());
  write_transcripts(ctx.out_dir / "judge_transcripts.jsonl", *judge.recorder);
  const std::string table = rep.to_table();
  write_text(ctx.out_dir / "quality.txt", table);
  ctx.out << table;
  return kOk;
}

int run_report(Context& ctx) {
  const fs::path in = ctx.cfg.get("report.in", ctx.out_dir.string());
  if (!fs::is_directory(in)) throw std::runtime_error("not a directory: " + in.string());
  std::string text;
  for (const char* name : {"report.txt", "robustness.txt", "quality.txt"}) {
    if (fs::exists(in / name)) text += "== " + std::string(name) + "\n" + read_text(in / name);
  }
  for (const char* name : {"ledger_sft.jsonl", "ledger_mipo.jsonl", "ledger_pgrpo.jsonl"}) {
    if (!fs::exists(in / name)) continue;
    const auto rows = read_jsonl(in / name);
    if (rows.empty()) continue;
    const auto& a = rows.front();
    const auto& b = rows.back();
    std::ostringstream line;
    line << "== " << name << "\nsteps " << rows.size() << ", loss " << a.at("loss").get<double>()
         << " -> " << b.at("loss").get<double>() << ", mean reward "
         << a.at("mean_reward").get<double>() << " -> " << b.at("mean_reward").get<double>()
         << ", P-rate " << b.at("p_rate").get<double>() << ", R-rate "
         << b.at("r_rate").get<double>() << "\n";
    text += line.str();
  }
  if (text.empty()) throw std::runtime_error("nothing to report in " + in.string());
  write_text(ctx.out_dir / "summary.txt", text);
  ctx.out << text;
  return kOk;
}

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pattern-aware reasoning training and evaluation toolkit", "patternrl"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::map<std::string, std::vector<std::string>> flag_values;
  std::map<std::string, CLI::App*> subs;

  for (const auto& verb : verbs()) {
    CLI::App* sub = app.add_subcommand(verb.name, verb.help);
    sub->add_option("--config", config_path, "Key-value config file");
    sub->add_option("--set", sets, "Override a config key (key=value), repeatable")
        ->allow_extra_args(false);
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--workers", workers, "Parallel worker cap")->check(CLI::PositiveNumber);
    for (const auto& f : verb.flags) {
      auto* opt = sub->add_option("--" + f.name, flag_values[verb.name + "/" + f.key], f.help);
      if (!f.multi) opt->expected(1);
      opt->allow_extra_args(false);
    }
    subs[verb.name] = sub;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  const Verb* verb = nullptr;
  for (const auto& v : verbs()) {
    if (subs[v.name]->parsed()) verb = &v;
  }
  if (verb == nullptr) {
    err << app.help();
    return kUsageError;
  }

  try {
    Context ctx{Config{}, fs::path(out_dir), out, 0, 1};
    if (!config_path.empty()) ctx.cfg = Config::load(config_path);
    for (const auto& s : sets) ctx.cfg.apply_override(s);
    for (const auto& f : verb->flags) {
      const auto& vals = flag_values[verb->name + "/" + f.key];
      if (vals.empty()) continue;
      std::string joined;
      for (const auto& v : vals) joined += (joined.empty() ? "" : ",") + v;
      ctx.cfg.set(f.key, joined);
    }
    if (seed) ctx.cfg.set("seed", std::to_string(*seed));
    if (workers) ctx.cfg.set("workers", std::to_string(*workers));
    const long long s = ctx.cfg.get_int("seed", 0);
    if (s < 0) throw ConfigError("seed must be >= 0");
    ctx.seed = static_cast<std::uint64_t>(s);
    ctx.workers = static_cast<int>(ctx.cfg.get_int("workers", 1));
    if (ctx.workers < 1) throw ConfigError("workers must be >= 1");

    const bool training = verb->name.rfind("train-", 0) == 0;
    TrainConfig tc;
    if (training) {
      tc = TrainConfig::from_config(ctx.cfg);
      tc.validate();
      tc.to_config(ctx.cfg);
    }

    fs::create_directories(ctx.out_dir);
    write_text(ctx.out_dir / "resolved.cfg",
               "# verb: " + verb->name + "\n" + ctx.cfg.dump());
    nlohmann::ordered_json meta;
    meta["verb"] = verb->name;
    meta["args"] = args;
    meta["started"] = iso_now();
    write_text(ctx.out_dir / "run_meta.json", meta.dump(2) + "\n");

    if (verb->name == "annotate") return run_annotate(ctx);
    if (verb->name == "build-pairs") return run_build_pairs(ctx);
    if (verb->name == "train-sft") return run_train_sft(ctx, tc);
    if (verb->name == "train-mipo") return run_train_mipo(ctx, tc);
    if (verb->name == "train-pgrpo") return run_train_pgrpo(ctx, tc);
    if (verb->name == "evaluate") return run_evaluate(ctx);
    if (verb->name == "robustness") return run_robustness_verb(ctx);
    if (verb->name == "quality") return run_quality(ctx);
    return run_report(ctx);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDomainError;
  }
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace patternrl::cli
