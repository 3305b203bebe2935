#pragma once

// Finite-difference checks of the objective gradients chained into the toy
// policy parameters.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "patternrl/objectives.hpp"
#include "patternrl/policy.hpp"
#include "patternrl/toy_task.hpp"
#include "patternrl/util.hpp"

namespace gradcheck {

using patternrl::Observation;
using patternrl::ToyPolicy;
using patternrl::TokenId;

inline constexpr double kStep = 1e-5;

struct Result {
  double max_rel = 0.0;      // over coordinates with a clearly non-zero gradient
  double max_abs_zero = 0.0; // FD magnitude where the analytic gradient is 0
  int checked = 0;
};

// Compares `analytic` with central differences of `loss` at `params` on up to
// `n_active` coordinates with |g| >= 1e-4 and `n_zero` with g == 0.
inline Result compare(const std::function<double(const std::vector<double>&)>& loss,
                      const std::vector<double>& params, const std::vector<double>& analytic,
                      std::mt19937_64& rng, int n_active = 24, int n_zero = 4) {
  std::vector<std::size_t> active, zero;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) >= 1e-4) active.push_back(i);
    if (analytic[i] == 0.0) zero.push_back(i);
  }
  std::shuffle(active.begin(), active.end(), rng);
  std::shuffle(zero.begin(), zero.end(), rng);
  active.resize(std::min<std::size_t>(active.size(), n_active));
  zero.resize(std::min<std::size_t>(zero.size(), n_zero));
  Result r;
  for (auto i : active) {
    const double fd = oracle::central_diff(loss, params, i, kStep);
    r.max_rel = std::max(r.max_rel, std::abs(fd - analytic[i]) /
                                        std::max(std::abs(fd), std::abs(analytic[i])));
    ++r.checked;
  }
  for (auto i : zero) {
    r.max_abs_zero = std::max(r.max_abs_zero, std::abs(oracle::central_diff(loss, params, i, kStep)));
  }
  return r;
}

inline ToyPolicy with_params(const std::vector<double>& p) {
  ToyPolicy out;
  std::copy(p.begin(), p.end(), out.mutable_parameters().begin());
  return out;
}

inline std::vector<double> params_of(const ToyPolicy& p) {
  return {p.parameters().begin(), p.parameters().end()};
}

inline Observation draw_obs(std::mt19937_64& rng) {
  return patternrl::toy::random_observation(rng());
}

inline Result sft_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ToyPolicy pol = ToyPolicy::random(rng(), 0.5);
  const Observation obs = draw_obs(rng);
  const auto tokens = pol.sample(obs, 1.0, rng()).tokens;
  const auto red = (rng() & 1) ? patternrl::SftReduction::kSum : patternrl::SftReduction::kTokenMean;

  std::vector<double> g(ToyPolicy::kNumParams, 0.0);
  const auto dlp = patternrl::sft_loss_grad(pol.logprob(obs, tokens), red);
  pol.accumulate_grad(obs, tokens, dlp, g);
  const auto loss = [&](const std::vector<double>& p) {
    return patternrl::sft_loss(with_params(p).logprob(obs, tokens), red);
  };
  return compare(loss, params_of(pol), g, rng);
}

inline double sum(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s;
}

inline Result mipo_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ToyPolicy pol = ToyPolicy::random(rng(), 0.5);
  // A reference near the policy keeps the margin out of the flat tails.
  std::vector<double> rp = params_of(pol);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (auto& x : rp) x += noise(rng);
  const ToyPolicy ref = with_params(rp);
  const Observation obs = draw_obs(rng);
  const auto chosen = ref.sample(obs, 1.0, rng()).tokens;
  const auto rejected = ref.sample(obs, 1.0, rng()).tokens;
  const double beta = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
  const double cref = sum(ref.logprob(obs, chosen));
  const double rref = sum(ref.logprob(obs, rejected));

  const auto lp = [&](const ToyPolicy& p) {
    return patternrl::PreferenceLogProbs{sum(p.logprob(obs, chosen)), cref,
                                         sum(p.logprob(obs, rejected)), rref, beta};
  };
  const auto d = patternrl::mipo_loss_grad(lp(pol));
  std::vector<double> g(ToyPolicy::kNumParams, 0.0);
  pol.accumulate_grad(obs, chosen, std::vector<double>(chosen.size(), d.d_chosen_policy), g);
  pol.accumulate_grad(obs, rejected, std::vector<double>(rejected.size(), d.d_rejected_policy), g);
  const auto loss = [&](const std::vector<double>& p) {
    return patternrl::mipo_loss(lp(with_params(p)));
  };
  return compare(loss, params_of(pol), g, rng);
}

inline Result grpo_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ToyPolicy pol = ToyPolicy::random(rng(), 0.5);
  // Old and reference parameters stay close enough that some ratios land
  // inside the clip range and some outside.
  auto near = [&](double scale) {
    std::vector<double> p = params_of(pol);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& x : p) x += n(rng);
    return with_params(p);
  };
  const ToyPolicy old = near(0.15);
  const ToyPolicy ref = near(0.3);
  const Observation obs = draw_obs(rng);
  const int G = 2 + static_cast<int>(rng() % 4);

  patternrl::GrpoOptions opt;
  opt.epsilon = 0.2;
  opt.kl_coef = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
  opt.normalization = (rng() & 1) ? patternrl::GrpoNormalization::kPerResponse
                                  : patternrl::GrpoNormalization::kGroupTokens;

  std::vector<std::vector<TokenId>> toks;
  patternrl::RolloutGroup group;
  for (int i = 0; i < G; ++i) {
    toks.push_back(old.sample(obs, 1.0, rng()).tokens);
    patternrl::RolloutResponse r;
    r.reward = std::uniform_real_distribution<double>(-1.0, 3.0)(rng);
    r.old = old.logprob(obs, toks.back());
    r.reference = ref.logprob(obs, toks.back());
    r.policy = pol.logprob(obs, toks.back());
    group.responses.push_back(std::move(r));
  }
  group.normalize_advantages();

  const auto dl = patternrl::grpo_loss_grad(group, opt);
  std::vector<double> g(ToyPolicy::kNumParams, 0.0);
  for (int i = 0; i < G; ++i) pol.accumulate_grad(obs, toks[i], dl[i], g);
  const auto loss = [&](const std::vector<double>& p) {
    const ToyPolicy cur = with_params(p);
    patternrl::RolloutGroup gg = group;
    for (int i = 0; i < G; ++i) gg.responses[i].policy = cur.logprob(obs, toks[i]);
    return patternrl::grpo_loss(gg, opt);
  };
  return compare(loss, params_of(pol), g, rng);
}

}  // namespace gradcheck
