#include "patternrl/toy_task.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "patternrl/datapipe.hpp"
#include "patternrl/judges.hpp"
#include "patternrl/trace.hpp"
#include "patternrl/util.hpp"

namespace patternrl::toy {

Verdict hidden_rule(const Observation& obs) {
  const auto& x = obs.features;
  return 8 * x[0] + 4 * x[1] + 2 * x[2] + x[3] > 0 ? Verdict::kFake : Verdict::kReal;
}

std::vector<Observation> all_observations() {
  std::vector<Observation> out;
  out.reserve(81);
  for (int i = 0; i < 81; ++i) {
    Observation o;
    int k = i;
    for (int j = 3; j >= 0; --j) {
      o.features[j] = k % 3 - 1;
      k /= 3;
    }
    o.image_ref = "toy:" + std::to_string(i);
    out.push_back(o);
  }
  return out;
}

Observation random_observation(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  const int i = static_cast<int>(rng() % 81);
  return all_observations()[static_cast<std::size_t>(i)];
}

namespace {

std::vector<std::string_view> fillers() {
  std::vector<std::string_view> out;
  for (TokenId id = toy_vocab::kFirstFiller; id < toy_vocab::kSize; ++id) {
    out.push_back(toy_vocab::word(id));
  }
  return out;
}

std::string join(const std::vector<std::string_view>& words) {
  std::string out;
  for (const auto w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// Draws `n` distinct fillers, avoiding `exclude` when possible.
std::vector<std::string_view> draw(std::mt19937_64& rng, std::size_t n,
                                   const std::set<std::string_view>& exclude) {
  std::vector<std::string_view> pool;
  for (const auto w : fillers()) {
    if (!exclude.count(w)) pool.push_back(w);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(n, pool.size()));
  return pool;
}

std::string compose(Shape shape, Verdict verdict, std::uint64_t seed, bool novel_reflection) {
  std::mt19937_64 rng(splitmix64(seed ^ 0x7a11));
  const std::string v(verdict_name(verdict));
  std::string out = "<fast>" + v + "</fast>";
  const bool plan = shape == Shape::kPlanned || shape == Shape::kFull;
  const bool reflect = shape == Shape::kReflective || shape == Shape::kFull;
  std::set<std::string_view> used;
  if (plan) {
    const auto p = draw(rng, 2, used);
    used.insert(p.begin(), p.end());
    out += "<planning>" + join(p) + "</planning>";
  }
  const auto r = draw(rng, 2 + rng() % 3, {});
  used.insert(r.begin(), r.end());
  out += "<reasoning>" + join(r) + "</reasoning>";
  if (reflect) {
    const auto f = draw(rng, 2, novel_reflection ? used : std::set<std::string_view>{});
    out += "<reflection>" + join(f) + "</reflection>";
  }
  out += "<conclusion>" + v + "</conclusion>";
  return out;
}

Shape pick_shape(std::mt19937_64& rng, bool easy) {
  // Easy cases lean towards the short form, hard ones towards planning and
  // reflection.
  static constexpr double kEasy[4] = {0.6, 0.15, 0.15, 0.1};
  static constexpr double kHard[4] = {0.2, 0.3, 0.25, 0.25};
  const double* w = easy ? kEasy : kHard;
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    acc += w[i];
    if (u < acc) return static_cast<Shape>(i);
  }
  return Shape::kFull;
}

}  // namespace

std::string compose_trace(Shape shape, Verdict verdict, std::uint64_t seed) {
  return compose(shape, verdict, seed, false);
}

Verdict shortcut_label(const Observation& obs, std::uint64_t seed) {
  if (obs.features[0] > 0) return Verdict::kFake;
  if (obs.features[0] < 0) return Verdict::kReal;
  return (splitmix64(seed ^ 0xc01) & 1) ? Verdict::kFake : Verdict::kReal;
}

std::vector<SftExample> make_sft_data(std::size_t n, std::uint64_t seed) {
  const ToyPolicy vocab;
  std::vector<SftExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed(seed, 0x5f7, i);
    std::mt19937_64 rng(s);
    SftExample ex;
    ex.id = "sft-" + std::to_string(i);
    ex.obs = random_observation(s);
    const Verdict label = shortcut_label(ex.obs, s);
    const Shape shape = pick_shape(rng, ex.obs.features[0] != 0);
    ex.tokens = vocab.tokenize(compose(shape, label, s, false));
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<RlRecord> make_rl_records(std::size_t n, std::uint64_t seed) {
  std::vector<RlRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RlRecord r;
    r.id = "rl-" + std::to_string(i);
    r.obs = random_observation(derive_seed(seed, 0x41, i));
    r.answer = hidden_rule(r.obs);
    out.push_back(std::move(r));
  }
  return out;
}

std::string expert_trace(const Observation& obs, std::uint64_t seed) {
  return compose(Shape::kFull, hidden_rule(obs), seed, true);
}

std::vector<PreferenceExample> make_preference_data(const Policy& policy, std::size_t n,
                                                    TextClient& judge, std::uint64_t seed) {
  std::vector<CandidateOutput> candidates;
  std::map<std::string, std::string> experts;
  std::map<std::string, Observation> obs_by_id;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed(seed, 0x3170, i);
    const Observation obs = random_observation(s);
    const std::string id = "pair-" + std::to_string(i);
    const SampleResult sample = policy.sample(obs, 1.0, s);
    candidates.push_back({id, obs.image_ref, hidden_rule(obs), policy.render(sample.tokens)});
    experts[id] = expert_trace(obs, s);
    obs_by_id[id] = obs;
  }
  const PairBuildResult built = build_mipo_pairs(candidates, experts, judge);
  std::vector<PreferenceExample> out;
  out.reserve(built.pairs.size());
  for (const auto& p : built.pairs) {
    PreferenceExample ex;
    ex.id = p.image_id;
    ex.obs = obs_by_id.at(p.image_id);
    ex.chosen = policy.tokenize(p.chosen);
    ex.rejected = policy.tokenize(p.rejected);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string between(std::string_view s, std::string_view open, std::string_view close) {
  const auto a = s.rfind(open);
  if (a == std::string_view::npos) return {};
  const auto from = a + open.size();
  const auto b = s.find(close, from);
  return std::string(s.substr(from, b == std::string_view::npos ? std::string_view::npos
                                                                  : b - from));
}

class OriginalityJudge final : public TextClient {
 public:
  std::string complete(const TextRequest& req) override {
    std::string body = between(req.prompt, "Response: [", "\n");
    if (!body.empty() && body.back() == ']') body.pop_back();
    int score = 0;
    try {
      const ReasoningTrace t = parse_trace(body);
      std::set<std::string> earlier;
      std::vector<std::string> reflection;
      for (const auto& seg : t.segments) {
        if (seg.tag == PatternTag::kReflection) {
          const auto w = words_of(seg.text);
          reflection.insert(reflection.end(), w.begin(), w.end());
        } else if (reflection.empty()) {
          for (auto& w : words_of(seg.text)) earlier.insert(w);
        }
      }
      if (!reflection.empty()) {
        const auto novel = std::count_if(reflection.begin(), reflection.end(),
                                         [&](const std::string& w) { return !earlier.count(w); });
        score = static_cast<int>(
            std::lround(100.0 * static_cast<double>(novel) / static_cast<double>(reflection.size())));
      }
    } catch (const TraceParseError&) {
    }
    return "Originality assessed.\nFinal Score: " + std::to_string(score);
  }
};

class RubricJudge final : public TextClient {
 public:
  std::string complete(const TextRequest& req) override {
    const std::string truth_word = between(req.prompt, "This is a ", " image.");
    const std::string answer =
        between(req.prompt, "[The Start of Assistant's Answer]\n", "\n[The End of Assistant's Answer]");
    int score = 1;
    try {
      const ReasoningTrace t = parse_trace(answer);
      const auto v = try_extract_verdict(t);
      const auto truth = verdict_from_name(truth_word);
      if (v && truth && *v == *truth) {
        std::size_t reasoning_words = 0;
        for (const auto& seg : t.segments) {
          if (seg.tag == PatternTag::kReasoning) reasoning_words += words_of(seg.text).size();
        }
        score = 2 + t.has(PatternTag::kPlanning) + t.has(PatternTag::kReflection) +
                (reasoning_words >= 3 ? 1 : 0);
        score = std::min(score, 5);
      }
    } catch (const TraceParseError&) {
    }
    return "{\"analysis\": \"rubric\", \"judgment\": \"[[" + std::to_string(score) + "]]\"}";
  }
};

class CombinedStubJudge final : public TextClient {
 public:
  std::string complete(const TextRequest& req) override {
    const std::string& p = req.prompt;
    if (p.find("Final Score:") != std::string::npos) return originality_.complete(req);
    const std::string a_open = "[The Start of Assistant A's Answer]\n";
    if (p.find(a_open) == std::string::npos) return rubric_.complete(req);
    const std::string truth = between(p, "This is a ", " image.");
    const int a = rubric_score(truth, between(p, a_open, "\n[The End of Assistant A's Answer]"));
    const int b = rubric_score(
        truth, between(p, "[The Start of Assistant B's Answer]\n", "\n[The End of Assistant B's Answer]"));
    const char* v = a > b ? "[[A]]" : (b > a ? "[[B]]" : "[[C]]");
    return std::string("{\"analysis\": \"rubric comparison\", \"judgment\": \"") + v + "\"}";
  }

 private:
  int rubric_score(const std::string& truth, const std::string& answer) {
    TextRequest r;
    r.prompt = "This is a " + truth + " image.\n[The Start of Assistant's Answer]\n" + answer +
               "\n[The End of Assistant's Answer]";
    return parse_bracket_score(rubric_.complete(r)).value_or(1);
  }

  OriginalityJudge originality_;
  RubricJudge rubric_;
};

}  // namespace

std::shared_ptr<TextClient> stub_judge() { return std::make_shared<CombinedStubJudge>(); }

std::shared_ptr<TextClient> originality_judge() { return std::make_shared<OriginalityJudge>(); }
std::shared_ptr<TextClient> rubric_judge() { return std::make_shared<RubricJudge>(); }

double heldout_accuracy(const Policy& policy, const std::vector<Observation>& observations) {
  if (observations.empty()) return 0.0;
  long correct = 0;
  for (const auto& obs : observations) {
    const SampleResult s = policy.sample(obs, 1e-6, 0);
    try {
      const auto v = try_extract_verdict(parse_trace(policy.render(s.tokens)));
      correct += (v && *v == hidden_rule(obs)) ? 1 : 0;
    } catch (const TraceParseError&) {
    }
  }
  return static_cast<double>(correct) / static_cast<double>(observations.size());
}

PipelineResult run_pipeline(const TrainConfig& config, const PipelineSizes& sizes,
                            TextClient& judge, RunLedger& ledger) {
  config.validate();
  PipelineResult out;
  ToyPolicy policy;
  const auto sft_data = make_sft_data(sizes.sft, config.seed);
  out.sft = train_sft(policy, sft_data, config.sft, config.seed, ledger);

  const auto pairs = make_preference_data(*out.sft, sizes.pair_candidates, judge, config.seed);
  out.pairs = pairs.size();
  if (pairs.empty()) throw std::runtime_error("no preference pairs survived the filter");
  out.cold = train_mipo(policy, out.sft, pairs, config.mipo, config.seed, ledger);

  const RewardEngine engine(config.pgrpo.reward, &judge);
  const auto records = make_rl_records(sizes.rl, config.seed);
  out.pgrpo = train_pgrpo(policy, out.cold, records, engine, config.pgrpo, config.seed, ledger,
                          config.workers);
  out.heldout_accuracy = heldout_accuracy(*out.pgrpo.final_policy, all_observations());
  return out;
}

PipelineSizes sizes_from_config(const Config& cfg) {
  PipelineSizes s;
  auto get = [&](const std::string& key, std::size_t def) {
    const long long v = cfg.get_int(key, static_cast<long long>(def));
    if (v < 1) throw ConfigError(key + " must be >= 1");
    return static_cast<std::size_t>(v);
  };
  s.sft = get("toy.sft_size", s.sft);
  s.pair_candidates = get("toy.pair_candidates", s.pair_candidates);
  s.rl = get("toy.rl_size", s.rl);
  return s;
}

}  // namespace patternrl::toy
