#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "patternrl/text_client.hpp"
#include "patternrl/trace.hpp"

namespace patternrl {

class JudgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Last "[[k]]" marker with an integer k.
std::optional<int> parse_bracket_score(std::string_view reply);

struct ScoreOptions {
  int max_attempts = 3;
  std::string image_ref;
};

// Rubric score in 1..5. Replies without a usable [[k]] are retried; a trace
// whose verdict does not match `truth` is floored to 1 regardless of the
// judge's number. Throws JudgeError when every attempt fails.
int score_trace(std::string_view trace_text, Verdict truth, TextClient& judge,
                const ScoreOptions& options = {});

enum class PairOutcome { kA, kB, kTie };

std::string_view outcome_name(PairOutcome o);

struct PairwiseOptions {
  int max_attempts = 3;
  std::string image_ref;
};

// Presents the two traces in a seed-determined order and maps the judge's
// [[A]]/[[B]]/[[C]] back to the caller's labelling.
PairOutcome pairwise_compare(std::string_view trace_a, std::string_view trace_b, Verdict truth,
                             TextClient& judge, std::uint64_t seed,
                             const PairwiseOptions& options = {});

// True when the given seed puts trace_b in the first slot.
bool pairwise_swapped(std::uint64_t seed);

// E = 1 / (1 + 10^((opponent - self) / 400))
double elo_expected(double self, double opponent);

class EloTable {
 public:
  explicit EloTable(double k = 32.0, double initial = 1000.0);

  void add_player(const std::string& name);
  bool has(const std::string& name) const;
  double rating(const std::string& name) const;
  double total() const;
  double k() const { return k_; }
  double initial() const { return initial_; }
  const std::map<std::string, double>& ratings() const { return ratings_; }

  // With tie = true the winner/loser roles are symmetric.
  void update(const std::string& winner, const std::string& loser, bool tie = false);

 private:
  double k_;
  double initial_;
  std::map<std::string, double> ratings_;
};

EloTable elo_update(EloTable table, const std::string& winner, const std::string& loser,
                    bool tie = false);

struct QualitySample {
  std::string id;
  std::string image_ref;
  Verdict truth = Verdict::kFake;
};

struct ModelTraces {
  std::string model;
  std::map<std::string, std::string> traces;  // sample id -> raw trace text
};

struct NamedJudge {
  std::string name;
  TextClient* client = nullptr;
};

struct QualityOptions {
  std::uint64_t seed = 0;
  int workers = 1;
  int max_attempts = 3;
  double elo_k = 32.0;
  double elo_initial = 1000.0;
};

struct JudgeQuality {
  std::map<std::string, double> mean_score;  // per model
  EloTable elo;
  long matches = 0;
  long ties = 0;
};

struct QualityReport {
  std::map<std::string, JudgeQuality> judges;
  long samples_used = 0;
  long samples_skipped = 0;  // some model had no trace for the sample

  std::string to_jsonl() const;
  std::string to_table() const;
};

// Rubric means and round-robin ELO (every model pair on every usable sample,
// matches shuffled by `seed`). Throws JudgeError when no sample is usable.
QualityReport run_quality_eval(const std::vector<QualitySample>& samples,
                               const std::vector<ModelTraces>& models,
                               const std::vector<NamedJudge>& judges,
                               const QualityOptions& options = {});

}  // namespace patternrl
