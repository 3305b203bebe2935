#pragma once

#include <span>
#include <string>
#include <vector>

namespace patternrl {

// Per-token natural-log probabilities; every entry finite and <= 0.
using TokenLogProbs = std::vector<double>;

void validate_logprobs(std::span<const double> lp);

// ---------------------------------------------------------------------------
// Supervised fine-tuning: negative log-likelihood of the target tokens.

enum class SftReduction { kTokenMean, kSum };

double sft_loss(std::span<const double> lp, SftReduction reduction = SftReduction::kTokenMean);

// dL/dlp_t for every token.
std::vector<double> sft_loss_grad(std::span<const double> lp,
                                  SftReduction reduction = SftReduction::kTokenMean);

// ---------------------------------------------------------------------------
// Mixed preference optimization (DPO-form objective against a frozen SFT
// reference). Sequence log-probs are sums over tokens.

struct PreferenceLogProbs {
  double chosen_policy = 0.0;
  double chosen_reference = 0.0;
  double rejected_policy = 0.0;
  double rejected_reference = 0.0;
  double beta = 0.1;
};

// (chosen_policy - chosen_reference) - (rejected_policy - rejected_reference)
double mipo_margin(const PreferenceLogProbs& p);

// -log sigmoid(beta * margin), evaluated as softplus(-beta * margin).
double mipo_loss(const PreferenceLogProbs& p);

struct MipoGrad {
  double d_chosen_policy = 0.0;
  double d_rejected_policy = 0.0;
};
MipoGrad mipo_loss_grad(const PreferenceLogProbs& p);

// ---------------------------------------------------------------------------
// Group-relative policy optimization.

enum class StdKind { kPopulation, kSample };

// (R_i - mean) / std. Groups whose std falls below 1e-8 get exact zeros.
std::vector<double> grpo_advantages(std::span<const double> rewards,
                                    StdKind kind = StdKind::kPopulation);

inline constexpr double kDegenerateStd = 1e-8;

struct RolloutResponse {
  double reward = 0.0;
  double advantage = 0.0;
  TokenLogProbs policy;     // current parameters
  TokenLogProbs old;        // sampling policy
  TokenLogProbs reference;  // frozen KL reference (cold-start model)
};

struct RolloutGroup {
  std::string query_id;
  std::vector<RolloutResponse> responses;

  // Fills every response's advantage from the group rewards.
  void normalize_advantages(StdKind kind = StdKind::kPopulation);
  std::size_t total_tokens() const;
};

enum class GrpoNormalization {
  kGroupTokens,   // one token-mean over all tokens of the group
  kPerResponse,   // token-mean within each response, then mean over responses
};

struct GrpoOptions {
  double epsilon = 0.2;
  double kl_coef = 0.0;  // beta'
  GrpoNormalization normalization = GrpoNormalization::kGroupTokens;
};

// Nonnegative per-token KL estimate exp(d) - d - 1, d = lp_ref - lp_policy.
double kl_estimate(double lp_policy, double lp_reference);

struct GrpoTerms {
  double loss = 0.0;        // -(surrogate - kl_coef * kl)
  double surrogate = 0.0;   // normalized sum of min(r A, clip(r) A)
  double unclipped = 0.0;   // normalized sum of r A
  double kl = 0.0;          // normalized sum of the KL estimate
};

GrpoTerms grpo_loss_terms(const RolloutGroup& group, const GrpoOptions& options);
double grpo_loss(const RolloutGroup& group, const GrpoOptions& options);

// dL/dlp_policy for every token of every response, same shape as the group.
std::vector<std::vector<double>> grpo_loss_grad(const RolloutGroup& group,
                                                const GrpoOptions& options);

}  // namespace patternrl
