#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "patternrl/policy.hpp"
#include "patternrl/text_client.hpp"
#include "patternrl/trainer.hpp"

// Synthetic hidden-rule task for exercising the full pipeline on ToyPolicy.
namespace patternrl::toy {

// FAKE iff 8*x1 + 4*x2 + 2*x3 + x4 > 0.
Verdict hidden_rule(const Observation& obs);

// All 81 feature tuples in lexicographic order.
std::vector<Observation> all_observations();
Observation random_observation(std::uint64_t seed);

enum class Shape { kShort, kPlanned, kReflective, kFull };

// Text trace in the toy vocabulary with the given shape and verdict. Word
// choice is drawn from `seed`.
std::string compose_trace(Shape shape, Verdict verdict, std::uint64_t seed);

// Annotator that only looks at x1. When x1 = 0 its label is a coin flip, so
// a policy imitating it tops out well below the hidden rule.
Verdict shortcut_label(const Observation& obs, std::uint64_t seed);

std::vector<SftExample> make_sft_data(std::size_t n, std::uint64_t seed);
std::vector<RlRecord> make_rl_records(std::size_t n, std::uint64_t seed);

// Expert traces follow the hidden rule and always plan and reflect.
std::string expert_trace(const Observation& obs, std::uint64_t seed);

// Samples `per_obs` outputs from `policy` for each observation, scores them
// against expert traces with `judge`, and converts the surviving
// preference pairs to token form.
std::vector<PreferenceExample> make_preference_data(const Policy& policy, std::size_t n,
                                                    TextClient& judge, std::uint64_t seed);

// Reflection judge: scores the share of reflection words that do not occur
// earlier in the trace, as "Final Score: k" on 0..100.
std::shared_ptr<TextClient> originality_judge();

// Rubric judge: 1 for a wrong verdict, otherwise 2 plus one point each for
// planning, reflection and at least three reasoning words, capped at 5.
std::shared_ptr<TextClient> rubric_judge();

// Offline judge answering all three judge prompts: reflection prompts go to
// originality_judge, rubric prompts to rubric_judge, and pairwise prompts
// prefer the higher rubric score ([[C]] on equal scores).
std::shared_ptr<TextClient> stub_judge();

// Greedy-decoding verdict accuracy against the hidden rule.
double heldout_accuracy(const Policy& policy, const std::vector<Observation>& observations);

struct PipelineSizes {
  std::size_t sft = 2048;
  std::size_t pair_candidates = 512;
  std::size_t rl = 1600;
};

struct PipelineResult {
  PolicySnapshot sft;
  PolicySnapshot cold;
  PgrpoResult pgrpo;
  std::size_t pairs = 0;
  double heldout_accuracy = 0.0;  // greedy, over all 81 observations
};

// SFT on shortcut-annotated traces, MiPO against the SFT snapshot, then
// P-GRPO anchored at the cold-start snapshot. Every stage appends to `ledger`.
PipelineResult run_pipeline(const TrainConfig& config, const PipelineSizes& sizes,
                            TextClient& judge, RunLedger& ledger);

PipelineSizes sizes_from_config(const Config& cfg);

}  // namespace patternrl::toy
