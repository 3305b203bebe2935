#include "patternrl/judges.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "patternrl/prompts.hpp"
#include "patternrl/util.hpp"

namespace patternrl {

std::optional<int> parse_bracket_score(std::string_view reply) {
  std::optional<int> found;
  std::size_t pos = 0;
  while ((pos = reply.find("[[", pos)) != std::string_view::npos) {
    const std::size_t close = reply.find("]]", pos + 2);
    if (close == std::string_view::npos) break;
    const std::string_view inner = trim(reply.substr(pos + 2, close - pos - 2));
    int v = 0;
    const auto res = std::from_chars(inner.data(), inner.data() + inner.size(), v);
    if (!inner.empty() && res.ec == std::errc() && res.ptr == inner.data() + inner.size()) {
      found = v;
    }
    pos = close + 2;
  }
  return found;
}

int score_trace(std::string_view trace_text, Verdict truth, TextClient& judge,
                const ScoreOptions& options) {
  if (trim(trace_text).empty()) throw std::invalid_argument("score_trace: empty trace");
  TextRequest req;
  req.prompt = render_template(prompts::score_eval(),
                               {{"image", options.image_ref},
                                {"Ground Truth", std::string(verdict_name(truth))},
                                {"Model's Reasoning Output", std::string(trace_text)}});
  if (!options.image_ref.empty()) req.image_ref = options.image_ref;

  std::optional<int> score;
  std::string problem;
  const int attempts = std::max(1, options.max_attempts);
  for (int i = 0; i < attempts && !score; ++i) {
    try {
      const std::string reply = judge.complete(req);
      const auto k = parse_bracket_score(reply);
      if (!k) {
        problem = "no [[k]] verdict in judge reply";
      } else if (*k < 1 || *k > 5) {
        problem = "judge score out of range: " + std::to_string(*k);
      } else {
        score = k;
      }
    } catch (const ClientError& e) {
      problem = e.what();
    }
  }
  if (!score) {
    throw JudgeError("scoring failed after " + std::to_string(attempts) + " attempts: " + problem);
  }

  std::optional<Verdict> verdict;
  try {
    verdict = try_extract_verdict(parse_trace(trace_text));
  } catch (const TraceParseError&) {
  }
  if (!verdict || *verdict != truth) return 1;
  return *score;
}

std::string_view outcome_name(PairOutcome o) {
  switch (o) {
    case PairOutcome::kA: return "A";
    case PairOutcome::kB: return "B";
    case PairOutcome::kTie: return "tie";
  }
  return "?";
}

bool pairwise_swapped(std::uint64_t seed) { return (splitmix64(seed) >> 63) != 0; }

namespace {

std::optional<char> parse_pair_verdict(std::string_view reply) {
  std::optional<char> found;
  std::size_t best = 0;
  for (const char c : {'A', 'B', 'C'}) {
    const std::string marker = std::string("[[") + c + "]]";
    const std::size_t pos = reply.rfind(marker);
    if (pos != std::string_view::npos && (!found || pos > best)) {
      found = c;
      best = pos;
    }
  }
  return found;
}

}  // namespace

PairOutcome pairwise_compare(std::string_view trace_a, std::string_view trace_b, Verdict truth,
                             TextClient& judge, std::uint64_t seed,
                             const PairwiseOptions& options) {
  for (const auto t : {trace_a, trace_b}) {
    parse_trace(t);  // throws TraceParseError for malformed input
  }
  const bool swapped = pairwise_swapped(seed);
  const std::string_view first = swapped ? trace_b : trace_a;
  const std::string_view second = swapped ? trace_a : trace_b;

  TextRequest req;
  req.prompt = render_template(prompts::pairwise_eval(),
                               {{"image", options.image_ref},
                                {"Ground Truth", std::string(verdict_name(truth))},
                                {"Model A's Reasoning Output", std::string(first)},
                                {"Model B's Reasoning Output", std::string(second)}});
  if (!options.image_ref.empty()) req.image_ref = options.image_ref;

  std::string problem;
  const int attempts = std::max(1, options.max_attempts);
  for (int i = 0; i < attempts; ++i) {
    try {
      const auto v = parse_pair_verdict(judge.complete(req));
      if (!v) {
        problem = "no [[A]]/[[B]]/[[C]] verdict in judge reply";
        continue;
      }
      if (*v == 'C') return PairOutcome::kTie;
      const bool first_won = *v == 'A';
      return first_won != swapped ? PairOutcome::kA : PairOutcome::kB;
    } catch (const ClientError& e) {
      problem = e.what();
    }
  }
  throw JudgeError("comparison failed after " + std::to_string(attempts) + " attempts: " +
                   problem);
}

double elo_expected(double self, double opponent) {
  return 1.0 / (1.0 + std::pow(10.0, (opponent - self) / 400.0));
}

EloTable::EloTable(double k, double initial) : k_(k), initial_(initial) {
  if (!(k > 0.0) || !std::isfinite(k) || !std::isfinite(initial)) {
    throw std::invalid_argument("ELO K must be positive and ratings finite");
  }
}

void EloTable::add_player(const std::string& name) { ratings_.try_emplace(name, initial_); }

bool EloTable::has(const std::string& name) const { return ratings_.count(name) != 0; }

double EloTable::rating(const std::string& name) const {
  auto it = ratings_.find(name);
  if (it == ratings_.end()) throw std::out_of_range("unknown ELO player: " + name);
  return it->second;
}

double EloTable::total() const {
  double s = 0.0;
  for (const auto& [_, r] : ratings_) s += r;
  return s;
}

void EloTable::update(const std::string& winner, const std::string& loser, bool tie) {
  auto w = ratings_.find(winner);
  auto l = ratings_.find(loser);
  if (w == ratings_.end()) throw std::out_of_range("unknown ELO player: " + winner);
  if (l == ratings_.end()) throw std::out_of_range("unknown ELO player: " + loser);
  if (w == l) throw std::invalid_argument("ELO match needs two distinct players");
  const double s = tie ? 0.5 : 1.0;
  // The loser's change is the exact negation, so the rating sum is preserved.
  const double delta = k_ * (s - elo_expected(w->second, l->second));
  w->second += delta;
  l->second -= delta;
}

EloTable elo_update(EloTable table, const std::string& winner, const std::string& loser,
                    bool tie) {
  table.update(winner, loser, tie);
  return table;
}

namespace {

struct Match {
  std::size_t sample;
  std::size_t a;
  std::size_t b;
};

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

QualityReport run_quality_eval(const std::vector<QualitySample>& samples,
                               const std::vector<ModelTraces>& models,
                               const std::vector<NamedJudge>& judges,
                               const QualityOptions& options) {
  if (samples.empty()) throw JudgeError("quality evaluation needs at least one sample");
  if (models.empty()) throw JudgeError("quality evaluation needs at least one model");
  if (judges.empty()) throw JudgeError("quality evaluation needs at least one judge");
  for (const auto& j : judges) {
    if (j.client == nullptr) throw std::invalid_argument("judge " + j.name + " has no client");
  }

  QualityReport report;
  std::vector<std::size_t> usable;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const bool complete = std::all_of(models.begin(), models.end(), [&](const ModelTraces& m) {
      auto it = m.traces.find(samples[s].id);
      return it != m.traces.end() && !trim(it->second).empty();
    });
    if (complete) {
      usable.push_back(s);
    } else {
      ++report.samples_skipped;
    }
  }
  report.samples_used = static_cast<long>(usable.size());
  if (usable.empty()) throw JudgeError("quality evaluation: no sample has traces from every model");

  std::vector<Match> schedule;
  for (const std::size_t s : usable) {
    for (std::size_t a = 0; a < models.size(); ++a) {
      for (std::size_t b = a + 1; b < models.size(); ++b) schedule.push_back({s, a, b});
    }
  }
  std::mt19937_64 rng(derive_seed(options.seed, 0x51));
  std::shuffle(schedule.begin(), schedule.end(), rng);

  for (const auto& judge : judges) {
    JudgeQuality jq{{}, EloTable(options.elo_k, options.elo_initial), 0, 0};
    for (const auto& m : models) jq.elo.add_player(m.model);

    // Rubric scores: one call per (model, sample), gathered in parallel.
    const std::size_t n_scores = models.size() * usable.size();
    std::vector<int> scores(n_scores, 0);
    ScoreOptions sopt;
    sopt.max_attempts = options.max_attempts;
    parallel_for(n_scores, options.workers, [&](std::size_t i) {
      const auto& m = models[i / usable.size()];
      const auto& sample = samples[usable[i % usable.size()]];
      ScoreOptions o = sopt;
      o.image_ref = sample.image_ref;
      scores[i] = score_trace(m.traces.at(sample.id), sample.truth, *judge.client, o);
    });
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      double sum = 0.0;
      for (std::size_t k = 0; k < usable.size(); ++k) sum += scores[mi * usable.size() + k];
      jq.mean_score[models[mi].model] = sum / static_cast<double>(usable.size());
    }

    // Pairwise outcomes in parallel, ratings applied in schedule order.
    std::vector<PairOutcome> outcomes(schedule.size(), PairOutcome::kTie);
    parallel_for(schedule.size(), options.workers, [&](std::size_t i) {
      const Match& mt = schedule[i];
      const auto& sample = samples[mt.sample];
      PairwiseOptions o;
      o.max_attempts = options.max_attempts;
      o.image_ref = sample.image_ref;
      outcomes[i] = pairwise_compare(models[mt.a].traces.at(sample.id),
                                     models[mt.b].traces.at(sample.id), sample.truth,
                                     *judge.client, derive_seed(options.seed, 0x9a, i), o);
    });
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      const std::string& a = models[schedule[i].a].model;
      const std::string& b = models[schedule[i].b].model;
      switch (outcomes[i]) {
        case PairOutcome::kA: jq.elo.update(a, b); break;
        case PairOutcome::kB: jq.elo.update(b, a); break;
        case PairOutcome::kTie:
          jq.elo.update(a, b, true);
          ++jq.ties;
          break;
      }
      ++jq.matches;
    }
    report.judges.emplace(judge.name, std::move(jq));
  }
  return report;
}

std::string QualityReport::to_jsonl() const {
  std::string out;
  for (const auto& [judge, jq] : judges) {
    for (const auto& [model, mean] : jq.mean_score) {
      nlohmann::ordered_json row;
      row["judge"] = judge;
      row["model"] = model;
      row["mean_score"] = mean;
      row["elo"] = jq.elo.rating(model);
      row["matches"] = jq.matches;
      row["ties"] = jq.ties;
      row["samples_used"] = samples_used;
      row["samples_skipped"] = samples_skipped;
      out += row.dump() + "\n";
    }
  }
  return out;
}

std::string QualityReport::to_table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-24s %8s %10s\n", "judge", "model", "score", "elo");
  out += line;
  for (const auto& [judge, jq] : judges) {
    for (const auto& [model, mean] : jq.mean_score) {
      std::snprintf(line, sizeof line, "%-16s %-24s %8s %10s\n", judge.c_str(), model.c_str(),
                    fmt_fixed(mean, 2).c_str(), fmt_fixed(jq.elo.rating(model), 1).c_str());
      out += line;
    }
  }
  out += "samples used " + std::to_string(samples_used) + ", skipped " +
         std::to_string(samples_skipped) + "\n";
  return out;
}

}  // namespace patternrl
