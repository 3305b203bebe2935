#include "patternrl/reward.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <stdexcept>

#include "patternrl/log.hpp"
#include "patternrl/prompts.hpp"

namespace patternrl {

PatternFlags derive_flags(const ReasoningTrace& trace, Verdict truth) {
  PatternFlags f;
  const auto v = try_extract_verdict(trace);
  f.correct = v.has_value() && *v == truth;
  f.planning = trace.has(PatternTag::kPlanning);
  f.reflection = trace.has(PatternTag::kReflection);
  return f;
}

double pattern_reward(PatternFlags flags) {
  if (flags.correct) return (flags.planning || flags.reflection) ? 2.0 : 1.0;
  if (flags.reflection) return -1.0;
  if (flags.planning) return -0.5;
  return 0.0;
}

int accuracy_reward(PatternFlags flags) { return flags.correct ? 1 : 0; }

int format_reward(const ReasoningTrace& trace) {
  return validate_format(trace) ? 1 : 0;
}

void RewardWeights::validate() const {
  if (!std::isfinite(reflection) || reflection < 0.0 || !std::isfinite(format) ||
      format < 0.0) {
    throw std::invalid_argument("reward weights must be finite and >= 0");
  }
}

RewardBreakdown total_reward(PatternFlags flags, double refl, int fmt,
                             const RewardWeights& weights) {
  if (!(refl >= 0.0 && refl <= 1.0)) {
    throw std::invalid_argument("reflection reward outside [0, 1]");
  }
  RewardBreakdown b;
  b.flags = flags;
  b.pattern = pattern_reward(flags);
  b.reflection = refl;
  b.format = fmt;
  b.total = b.pattern + weights.reflection * refl * (flags.correct ? 1.0 : 0.0) +
            weights.format * static_cast<double>(fmt);
  return b;
}

std::optional<int> parse_final_score(std::string_view response) {
  constexpr std::string_view kPrefix = "Final Score:";
  std::optional<int> found;
  std::size_t start = 0;
  while (start <= response.size()) {
    std::size_t end = response.find('\n', start);
    if (end == std::string_view::npos) end = response.size();
    const std::string_view line = trim(response.substr(start, end - start));
    if (line.starts_with(kPrefix)) {
      const std::string_view num = trim(line.substr(kPrefix.size()));
      int value = 0;
      const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), value);
      if (ec == std::errc() && ptr == num.data() + num.size()) {
        found = value;
      } else {
        found.reset();
      }
    }
    start = end + 1;
  }
  if (found && (*found < 0 || *found > 100)) return std::nullopt;
  return found;
}

double reflection_reward(const ReasoningTrace& trace, TextClient& judge,
                         const ReflectionJudgeOptions& options) {
  if (!trace.has(PatternTag::kReflection)) return 0.0;
  const std::string response =
      trace.raw.empty() ? serialize_trace(trace) : trace.raw;
  TextRequest req;
  req.prompt = render_template(prompts::reflection_reward(),
                               {{"image", options.image_ref},
                                {"Question", options.question},
                                {"Reasoning Output", response}});
  if (!options.image_ref.empty()) req.image_ref = options.image_ref;

  const int attempts = std::max(1, options.max_attempts);
  std::string last_problem;
  for (int i = 0; i < attempts; ++i) {
    try {
      const auto score = parse_final_score(judge.complete(req));
      if (score) return static_cast<double>(*score) / 100.0;
      last_problem = "no parseable \"Final Score:\" line";
    } catch (const ClientError& e) {
      last_problem = e.what();
    }
  }
  log_warning("reflection judge gave up after " + std::to_string(attempts) +
              " attempts (" + last_problem + "); reward set to 0");
  return 0.0;
}

std::string_view reward_mode_name(RewardMode mode) {
  return mode == RewardMode::kPattern ? "pattern" : "accuracy";
}

RewardMode reward_mode_from_name(std::string_view name) {
  if (name == "pattern") return RewardMode::kPattern;
  if (name == "accuracy") return RewardMode::kAccuracy;
  throw std::invalid_argument("unknown reward mode: " + std::string(name));
}

RewardEngine::RewardEngine(RewardConfig config, TextClient* judge)
    : config_(std::move(config)), judge_(judge) {
  config_.weights.validate();
  if (config_.use_reflection && judge_ == nullptr) {
    throw std::invalid_argument("reflection reward enabled without a judge client");
  }
}

RewardBreakdown RewardEngine::score(std::string_view response, Verdict truth,
                                    std::string_view image_ref) const {
  ReasoningTrace trace;
  try {
    trace = parse_trace(response);
  } catch (const TraceParseError&) {
    trace.raw = std::string(response);
  }
  return score(trace, truth, image_ref);
}

RewardBreakdown RewardEngine::score(const ReasoningTrace& trace, Verdict truth,
                                    std::string_view image_ref) const {
  const PatternFlags flags = derive_flags(trace, truth);
  double refl = 0.0;
  if (config_.use_reflection && flags.correct && flags.reflection) {
    ReflectionJudgeOptions opts;
    opts.max_attempts = config_.judge_attempts;
    opts.image_ref = std::string(image_ref);
    ++judge_calls_;
    refl = reflection_reward(trace, *judge_, opts);
  }
  const int fmt = config_.use_format ? format_reward(trace) : 0;
  RewardBreakdown b = total_reward(flags, refl, fmt, config_.weights);
  if (config_.mode == RewardMode::kAccuracy) {
    b.pattern = static_cast<double>(accuracy_reward(flags));
    b.total = b.pattern +
              config_.weights.reflection * refl * (flags.correct ? 1.0 : 0.0) +
              config_.weights.format * static_cast<double>(fmt);
  }
  return b;
}

}  // namespace patternrl
