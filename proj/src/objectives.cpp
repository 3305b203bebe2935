#include "patternrl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace patternrl {
namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_group(const RolloutGroup& group, const GrpoOptions& options) {
  if (!(options.epsilon > 0.0 && options.epsilon < 1.0)) {
    throw std::invalid_argument("grpo: epsilon must lie in (0, 1)");
  }
  if (!std::isfinite(options.kl_coef) || options.kl_coef < 0.0) {
    throw std::invalid_argument("grpo: kl_coef must be finite and >= 0");
  }
  if (group.responses.empty()) throw std::invalid_argument("grpo: empty group");
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    const auto& r = group.responses[i];
    if (r.policy.empty()) {
      throw std::invalid_argument("grpo: response " + std::to_string(i) + " has no tokens");
    }
    if (r.policy.size() != r.old.size() || r.policy.size() != r.reference.size()) {
      throw std::invalid_argument("grpo: response " + std::to_string(i) +
                                  " has mismatched log-prob lengths");
    }
  }
}

// Token weight applied to every token of response i.
double token_weight(const RolloutGroup& group, std::size_t i, const GrpoOptions& options) {
  if (options.normalization == GrpoNormalization::kGroupTokens) {
    return 1.0 / static_cast<double>(group.total_tokens());
  }
  return 1.0 / (static_cast<double>(group.responses.size()) *
                static_cast<double>(group.responses[i].policy.size()));
}

}  // namespace

void validate_logprobs(std::span<const double> lp) {
  if (lp.empty()) throw std::invalid_argument("log-prob sequence is empty");
  for (double v : lp) {
    if (!std::isfinite(v) || v > 0.0) {
      throw std::invalid_argument("log-prob entries must be finite and <= 0");
    }
  }
}

double sft_loss(std::span<const double> lp, SftReduction reduction) {
  validate_logprobs(lp);
  double nll = 0.0;
  for (double v : lp) nll -= v;
  return reduction == SftReduction::kSum ? nll : nll / static_cast<double>(lp.size());
}

std::vector<double> sft_loss_grad(std::span<const double> lp, SftReduction reduction) {
  validate_logprobs(lp);
  const double g = reduction == SftReduction::kSum ? -1.0 : -1.0 / static_cast<double>(lp.size());
  return std::vector<double>(lp.size(), g);
}

double mipo_margin(const PreferenceLogProbs& p) {
  return (p.chosen_policy - p.chosen_reference) - (p.rejected_policy - p.rejected_reference);
}

double mipo_loss(const PreferenceLogProbs& p) {
  if (!std::isfinite(p.beta) || p.beta < 0.0) {
    throw std::invalid_argument("mipo: beta must be finite and >= 0");
  }
  const double m = mipo_margin(p);
  if (!std::isfinite(m)) throw std::invalid_argument("mipo: non-finite log-probs");
  return softplus(-p.beta * m);
}

MipoGrad mipo_loss_grad(const PreferenceLogProbs& p) {
  // d/dm softplus(-beta m) = -beta * sigmoid(-beta m)
  const double d = -p.beta * sigmoid(-p.beta * mipo_margin(p));
  return {d, -d};
}

std::vector<double> grpo_advantages(std::span<const double> rewards, StdKind kind) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("grpo_advantages: need at least 2 rewards");
  const double n = static_cast<double>(g);
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  // Second pass removes most of the rounding left in the first mean.
  double corr = 0.0;
  for (double r : rewards) corr += r - mean;
  mean += corr / n;

  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double denom = kind == StdKind::kPopulation ? n : n - 1.0;
  const double sd = std::sqrt(ss / denom);

  std::vector<double> adv(g, 0.0);
  if (!(sd >= kDegenerateStd)) return adv;
  for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

void RolloutGroup::normalize_advantages(StdKind kind) {
  std::vector<double> rewards;
  rewards.reserve(responses.size());
  for (const auto& r : responses) rewards.push_back(r.reward);
  const auto adv = grpo_advantages(rewards, kind);
  for (std::size_t i = 0; i < responses.size(); ++i) responses[i].advantage = adv[i];
}

std::size_t RolloutGroup::total_tokens() const {
  std::size_t n = 0;
  for (const auto& r : responses) n += r.policy.size();
  return n;
}

double kl_estimate(double lp_policy, double lp_reference) {
  const double d = lp_reference - lp_policy;
  return std::expm1(d) - d;
}

GrpoTerms grpo_loss_terms(const RolloutGroup& group, const GrpoOptions& options) {
  check_group(group, options);
  GrpoTerms out;
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    const auto& resp = group.responses[i];
    const double w = token_weight(group, i, options);
    const double a = resp.advantage;
    for (std::size_t t = 0; t < resp.policy.size(); ++t) {
      const double ratio = std::exp(resp.policy[t] - resp.old[t]);
      const double clipped =
          std::clamp(ratio, 1.0 - options.epsilon, 1.0 + options.epsilon);
      out.surrogate += w * std::min(ratio * a, clipped * a);
      out.unclipped += w * (ratio * a);
      out.kl += w * kl_estimate(resp.policy[t], resp.reference[t]);
    }
  }
  out.loss = -(out.surrogate - options.kl_coef * out.kl);
  return out;
}

double grpo_loss(const RolloutGroup& group, const GrpoOptions& options) {
  return grpo_loss_terms(group, options).loss;
}

std::vector<std::vector<double>> grpo_loss_grad(const RolloutGroup& group,
                                                const GrpoOptions& options) {
  check_group(group, options);
  std::vector<std::vector<double>> grad(group.responses.size());
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    const auto& resp = group.responses[i];
    const double w = token_weight(group, i, options);
    const double a = resp.advantage;
    grad[i].resize(resp.policy.size());
    for (std::size_t t = 0; t < resp.policy.size(); ++t) {
      const double ratio = std::exp(resp.policy[t] - resp.old[t]);
      const double clipped =
          std::clamp(ratio, 1.0 - options.epsilon, 1.0 + options.epsilon);
      // The unclipped branch carries gradient r * A; the clipped branch is
      // constant in the policy log-prob.
      const double d_surrogate = (ratio * a <= clipped * a) ? ratio * a : 0.0;
      const double d = resp.reference[t] - resp.policy[t];
      const double d_kl = 1.0 - std::exp(d);
      grad[i][t] = -w * (d_surrogate - options.kl_coef * d_kl);
    }
  }
  return grad;
}

}  // namespace patternrl
