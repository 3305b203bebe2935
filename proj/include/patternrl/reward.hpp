#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <string_view>

#include "patternrl/text_client.hpp"
#include "patternrl/trace.hpp"

namespace patternrl {

// C: final answer correct; P: a planning segment is present;
// R: a reflection segment is present.
struct PatternFlags {
  bool correct = false;
  bool planning = false;
  bool reflection = false;

  bool operator==(const PatternFlags&) const = default;
};

// An ambiguous or missing verdict counts as incorrect.
PatternFlags derive_flags(const ReasoningTrace& trace, Verdict truth);

// Piecewise pattern-aware reward:
//   C=1 and (P or R)   ->  2.0
//   C=1, no P, no R    ->  1.0
//   C=0, no P, no R    ->  0.0
//   C=0, P, no R       -> -0.5
//   C=0, R             -> -1.0
double pattern_reward(PatternFlags flags);

// Vanilla GRPO accuracy reward: C.
int accuracy_reward(PatternFlags flags);

int format_reward(const ReasoningTrace& trace);

struct RewardWeights {
  double reflection = 1.0;  // lambda1
  double format = 0.5;      // lambda2

  void validate() const;
};

struct RewardBreakdown {
  PatternFlags flags;
  double pattern = 0.0;     // R_pattern, or R_acc in accuracy mode
  double reflection = 0.0;  // judge score in [0, 1]
  int format = 0;
  double total = 0.0;

  bool operator==(const RewardBreakdown&) const = default;
};

// total = pattern_reward(flags) + lambda1 * refl * [C = 1] + lambda2 * fmt
RewardBreakdown total_reward(PatternFlags flags, double refl, int fmt,
                             const RewardWeights& weights);

struct ReflectionJudgeOptions {
  int max_attempts = 3;
  std::string image_ref;
  std::string question = "Please determine the authenticity of this image.";
};

// Parses the last line of the form "Final Score: <integer>" (0..100).
std::optional<int> parse_final_score(std::string_view response);

// Asks the judge to rate the originality of the reflection segment and maps
// the 0-100 score to [0, 1]. No reflection segment: 0 without a call.
// Judge errors or unparseable replies are retried; after the last attempt
// the reward is 0 and a warning is logged.
double reflection_reward(const ReasoningTrace& trace, TextClient& judge,
                         const ReflectionJudgeOptions& options = {});

enum class RewardMode { kPattern, kAccuracy };

std::string_view reward_mode_name(RewardMode mode);
RewardMode reward_mode_from_name(std::string_view name);

struct RewardConfig {
  RewardMode mode = RewardMode::kPattern;
  RewardWeights weights;
  bool use_reflection = true;
  bool use_format = true;
  int judge_attempts = 3;
};

// Scores raw model output end to end: parse, flags, reflection judge (only
// queried when C = 1 and a reflection segment exists), format, composite.
// A parse error yields an empty trace, which scores as incorrect and
// format-invalid.
class RewardEngine {
 public:
  // `judge` may be null when use_reflection is false.
  RewardEngine(RewardConfig config, TextClient* judge);

  RewardBreakdown score(std::string_view response, Verdict truth,
                        std::string_view image_ref = {}) const;
  RewardBreakdown score(const ReasoningTrace& trace, Verdict truth,
                        std::string_view image_ref = {}) const;

  const RewardConfig& config() const { return config_; }
  long judge_calls() const { return judge_calls_.load(); }

 private:
  RewardConfig config_;
  TextClient* judge_;
  mutable std::atomic<long> judge_calls_{0};
};

}  // namespace patternrl
