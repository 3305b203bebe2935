#include "patternrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "patternrl/util.hpp"

namespace patternrl {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be > 0");
  };
  auto at_least = [](long long v, long long lo, const char* what) {
    if (v < lo) throw ConfigError(std::string(what) + " must be >= " + std::to_string(lo));
  };
  positive(sft.lr, "sft.lr");
  positive(mipo.lr, "mipo.lr");
  positive(pgrpo.lr, "pgrpo.lr");
  positive(pgrpo.temperature, "pgrpo.temperature");
  at_least(sft.epochs, 1, "sft.epochs");
  at_least(mipo.epochs, 1, "mipo.epochs");
  at_least(pgrpo.epochs, 1, "pgrpo.epochs");
  at_least(sft.batch, 1, "sft.batch");
  at_least(mipo.batch, 1, "mipo.batch");
  at_least(pgrpo.batch, 1, "pgrpo.batch");
  at_least(pgrpo.group_size, 2, "pgrpo.G");
  at_least(pgrpo.max_steps, 0, "pgrpo.max_steps");
  at_least(workers, 1, "workers");
  if (mipo.beta < 0.0 || !std::isfinite(mipo.beta)) throw ConfigError("mipo.beta must be >= 0");
  if (pgrpo.epsilon < 0.0 || pgrpo.epsilon >= 1.0) {
    throw ConfigError("pgrpo.epsilon must be in [0, 1)");
  }
  if (pgrpo.beta_prime < 0.0) throw ConfigError("pgrpo.beta_prime must be >= 0");
  pgrpo.reward.weights.validate();
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
  TrainConfig t;
  t.sft.epochs = static_cast<int>(cfg.get_int("sft.epochs", t.sft.epochs));
  t.sft.lr = cfg.get_double("sft.lr", t.sft.lr);
  t.sft.batch = static_cast<int>(cfg.get_int("sft.batch", t.sft.batch));
  const std::string red = cfg.get("sft.reduction", "token_mean");
  if (red == "token_mean") {
    t.sft.reduction = SftReduction::kTokenMean;
  } else if (red == "sum") {
    t.sft.reduction = SftReduction::kSum;
  } else {
    throw ConfigError("sft.reduction must be token_mean or sum");
  }

  t.mipo.epochs = static_cast<int>(cfg.get_int("mipo.epochs", t.mipo.epochs));
  t.mipo.lr = cfg.get_double("mipo.lr", t.mipo.lr);
  t.mipo.batch = static_cast<int>(cfg.get_int("mipo.batch", t.mipo.batch));
  t.mipo.beta = cfg.get_double("mipo.beta", t.mipo.beta);

  auto& p = t.pgrpo;
  p.epochs = static_cast<int>(cfg.get_int("pgrpo.epochs", p.epochs));
  p.lr = cfg.get_double("pgrpo.lr", p.lr);
  p.batch = static_cast<int>(cfg.get_int("pgrpo.batch", p.batch));
  p.group_size = static_cast<int>(cfg.get_int("pgrpo.G", p.group_size));
  p.temperature = cfg.get_double("pgrpo.temperature", p.temperature);
  p.epsilon = cfg.get_double("pgrpo.epsilon", p.epsilon);
  p.beta_prime = cfg.get_double("pgrpo.beta_prime", p.beta_prime);
  p.max_steps = static_cast<int>(cfg.get_int("pgrpo.max_steps", p.max_steps));
  p.reward.weights.reflection = cfg.get_double("pgrpo.lambda1", p.reward.weights.reflection);
  p.reward.weights.format = cfg.get_double("pgrpo.lambda2", p.reward.weights.format);
  p.reward.mode = reward_mode_from_name(cfg.get("pgrpo.reward_mode", "pattern"));
  p.reward.use_reflection = cfg.get_bool("pgrpo.use_reflection", p.reward.use_reflection);
  p.reward.use_format = cfg.get_bool("pgrpo.use_format", p.reward.use_format);
  p.reward.judge_attempts =
      static_cast<int>(cfg.get_int("pgrpo.judge_attempts", p.reward.judge_attempts));
  const std::string norm = cfg.get("pgrpo.normalization", "group_tokens");
  if (norm == "group_tokens") {
    p.normalization = GrpoNormalization::kGroupTokens;
  } else if (norm == "per_response") {
    p.normalization = GrpoNormalization::kPerResponse;
  } else {
    throw ConfigError("pgrpo.normalization must be group_tokens or per_response");
  }
  const std::string sk = cfg.get("pgrpo.std", "population");
  if (sk == "population") {
    p.std_kind = StdKind::kPopulation;
  } else if (sk == "sample") {
    p.std_kind = StdKind::kSample;
  } else {
    throw ConfigError("pgrpo.std must be population or sample");
  }

  for (const auto& [k, v] : cfg.section("adapter.")) t.adapter[k] = v;
  const long long seed = cfg.get_int("seed", 0);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  t.seed = static_cast<std::uint64_t>(seed);
  t.workers = static_cast<int>(cfg.get_int("workers", 1));
  return t;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::to_config(Config& cfg) const {
  cfg.set("sft.epochs", std::to_string(sft.epochs));
  cfg.set("sft.lr", num(sft.lr));
  cfg.set("sft.batch", std::to_string(sft.batch));
  cfg.set("sft.reduction", sft.reduction == SftReduction::kSum ? "sum" : "token_mean");
  cfg.set("mipo.epochs", std::to_string(mipo.epochs));
  cfg.set("mipo.lr", num(mipo.lr));
  cfg.set("mipo.batch", std::to_string(mipo.batch));
  cfg.set("mipo.beta", num(mipo.beta));
  cfg.set("pgrpo.epochs", std::to_string(pgrpo.epochs));
  cfg.set("pgrpo.lr", num(pgrpo.lr));
  cfg.set("pgrpo.batch", std::to_string(pgrpo.batch));
  cfg.set("pgrpo.G", std::to_string(pgrpo.group_size));
  cfg.set("pgrpo.temperature", num(pgrpo.temperature));
  cfg.set("pgrpo.epsilon", num(pgrpo.epsilon));
  cfg.set("pgrpo.beta_prime", num(pgrpo.beta_prime));
  cfg.set("pgrpo.max_steps", std::to_string(pgrpo.max_steps));
  cfg.set("pgrpo.lambda1", num(pgrpo.reward.weights.reflection));
  cfg.set("pgrpo.lambda2", num(pgrpo.reward.weights.format));
  cfg.set("pgrpo.reward_mode", std::string(reward_mode_name(pgrpo.reward.mode)));
  cfg.set("pgrpo.use_reflection", pgrpo.reward.use_reflection ? "true" : "false");
  cfg.set("pgrpo.use_format", pgrpo.reward.use_format ? "true" : "false");
  cfg.set("pgrpo.judge_attempts", std::to_string(pgrpo.reward.judge_attempts));
  cfg.set("pgrpo.normalization", pgrpo.normalization == GrpoNormalization::kPerResponse
                                     ? "per_response"
                                     : "group_tokens");
  cfg.set("pgrpo.std", pgrpo.std_kind == StdKind::kSample ? "sample" : "population");
  for (const auto& [k, v] : adapter) cfg.set("adapter." + k, v);
  cfg.set("seed", std::to_string(seed));
  cfg.set("workers", std::to_string(workers));
}

// ---------------------------------------------------------------------------

void RunLedger::append(const LedgerEntry& e) {
  std::lock_guard lock(mu_);
  entries_.push_back(e);
}

std::vector<LedgerEntry> RunLedger::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::vector<LedgerEntry> RunLedger::stage(const std::string& name) const {
  std::lock_guard lock(mu_);
  std::vector<LedgerEntry> out;
  for (const auto& e : entries_) {
    if (e.stage == name) out.push_back(e);
  }
  return out;
}

std::uint64_t RunLedger::digest() const {
  std::lock_guard lock(mu_);
  Fnv1a h;
  for (const auto& e : entries_) {
    h.add(e.stage);
    h.add_value(e.step);
    h.add_value(e.loss);
    h.add_value(e.mean_reward);
    h.add_value(e.p_rate);
    h.add_value(e.r_rate);
    h.add_value(e.accuracy);
    h.add_value(e.margin);
    h.add_value(e.skipped);
    h.add_value(e.digest);
  }
  return h.value();
}

std::string RunLedger::to_jsonl() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& e : entries_) {
    nlohmann::ordered_json j;
    j["stage"] = e.stage;
    j["step"] = e.step;
    j["loss"] = e.loss;
    j["mean_reward"] = e.mean_reward;
    j["p_rate"] = e.p_rate;
    j["r_rate"] = e.r_rate;
    j["accuracy"] = e.accuracy;
    j["margin"] = e.margin;
    j["skipped"] = e.skipped;
    j["digest"] = hex64(e.digest);
    out += j.dump() + "\n";
  }
  return out;
}

void RunLedger::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write ledger " + path.string());
  out << to_jsonl();
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t param_digest(std::span<const double> params, std::uint64_t step_seed) {
  Fnv1a h;
  h.add(params);
  h.add_value(step_seed);
  return h.value();
}

void sgd_step(TrainablePolicy& policy, std::span<const double> grad, double lr) {
  auto p = policy.mutable_parameters();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grad[i];
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0xe9, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

double seq_sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

PolicySnapshot train_sft(TrainablePolicy& policy, std::span<const SftExample> data,
                         const SftConfig& config, std::uint64_t seed, RunLedger& ledger) {
  if (data.empty()) throw std::invalid_argument("train_sft: empty dataset");
  if (config.batch < 1 || config.epochs < 0 || config.lr < 0.0) {
    throw std::invalid_argument("train_sft: bad configuration");
  }
  std::vector<double> grad(policy.parameters().size());
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const SftExample& ex = data[order[k]];
        const auto lp = policy.logprob(ex.obs, ex.tokens);
        loss += scale * sft_loss(lp, config.reduction);
        auto w = sft_loss_grad(lp, config.reduction);
        for (double& x : w) x *= scale;
        policy.accumulate_grad(ex.obs, ex.tokens, w, grad);
      }
      sgd_step(policy, grad, config.lr);
      LedgerEntry e;
      e.stage = "sft";
      e.step = step;
      e.loss = loss;
      e.digest = param_digest(policy.parameters(), derive_seed(seed, 0x5f7, step));
      ledger.append(e);
      ++step;
    }
  }
  return policy.snapshot();
}

PolicySnapshot train_mipo(TrainablePolicy& policy, const PolicySnapshot& reference,
                          std::span<const PreferenceExample> pairs, const MipoConfig& config,
                          std::uint64_t seed, RunLedger& ledger) {
  if (pairs.empty()) throw std::invalid_argument("train_mipo: empty pair set");
  if (!reference) throw std::invalid_argument("train_mipo: missing reference snapshot");
  if (config.batch < 1 || config.epochs < 0 || config.lr < 0.0 || config.beta < 0.0) {
    throw std::invalid_argument("train_mipo: bad configuration");
  }
  std::vector<double> ref_chosen(pairs.size());
  std::vector<double> ref_rejected(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ref_chosen[i] = seq_sum(reference->logprob(pairs[i].obs, pairs[i].chosen));
    ref_rejected[i] = seq_sum(reference->logprob(pairs[i].obs, pairs[i].rejected));
  }

  std::vector<double> grad(policy.parameters().size());
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(pairs.size(), seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      double margin = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const PreferenceExample& ex = pairs[i];
        PreferenceLogProbs p;
        p.chosen_policy = seq_sum(policy.logprob(ex.obs, ex.chosen));
        p.rejected_policy = seq_sum(policy.logprob(ex.obs, ex.rejected));
        p.chosen_reference = ref_chosen[i];
        p.rejected_reference = ref_rejected[i];
        p.beta = config.beta;
        loss += scale * mipo_loss(p);
        margin += scale * mipo_margin(p);
        const MipoGrad g = mipo_loss_grad(p);
        const std::vector<double> wc(ex.chosen.size(), scale * g.d_chosen_policy);
        const std::vector<double> wr(ex.rejected.size(), scale * g.d_rejected_policy);
        policy.accumulate_grad(ex.obs, ex.chosen, wc, grad);
        policy.accumulate_grad(ex.obs, ex.rejected, wr, grad);
      }
      sgd_step(policy, grad, config.lr);
      LedgerEntry e;
      e.stage = "mipo";
      e.step = step;
      e.loss = loss;
      e.margin = margin;
      e.digest = param_digest(policy.parameters(), derive_seed(seed, 0x3170, step));
      ledger.append(e);
      ++step;
    }
  }
  return policy.snapshot();
}

PgrpoResult train_pgrpo(TrainablePolicy& policy, const PolicySnapshot& reference,
                        std::span<const RlRecord> records, const RewardEngine& rewards,
                        const PgrpoConfig& config, std::uint64_t seed, RunLedger& ledger,
                        int workers) {
  if (records.empty()) throw std::invalid_argument("train_pgrpo: empty record set");
  if (!reference) throw std::invalid_argument("train_pgrpo: missing reference snapshot");
  if (config.batch < 1 || config.epochs < 0 || config.lr < 0.0 || config.group_size < 2 ||
      !(config.temperature > 0.0)) {
    throw std::invalid_argument("train_pgrpo: bad configuration");
  }
  const GrpoOptions gopt{config.epsilon, config.beta_prime, config.normalization};
  const std::size_t G = static_cast<std::size_t>(config.group_size);

  PgrpoResult result;
  std::vector<double> grad(policy.parameters().size());
  int step = 0;
  bool done = false;
  for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
    const auto order = epoch_order(records.size(), seed, epoch);
    for (std::size_t start = 0; start < order.size() && !done; start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      const std::size_t B = end - start;
      const std::uint64_t step_seed = derive_seed(seed, 0x9e0, static_cast<std::uint64_t>(step));

      // Rollouts and rewards; pure given the current parameters.
      std::vector<RolloutGroup> groups(B);
      std::vector<std::vector<std::vector<TokenId>>> tokens(B);
      std::vector<std::vector<RolloutRecord>> recs(B);
      for (std::size_t b = 0; b < B; ++b) {
        groups[b].responses.resize(G);
        tokens[b].resize(G);
        recs[b].resize(G);
      }
      const TrainablePolicy& current = policy;
      parallel_for(B * G, workers, [&](std::size_t flat) {
        const std::size_t b = flat / G;
        const std::size_t g = flat % G;
        const RlRecord& rec = records[order[start + b]];
        SampleResult s = current.sample(rec.obs, config.temperature,
                                        derive_seed(step_seed, b, g));
        const std::string text = current.render(s.tokens);
        const RewardBreakdown rb = rewards.score(text, rec.answer, rec.obs.image_ref);
        RolloutResponse resp;
        resp.reward = rb.total;
        resp.policy = s.logprobs;
        resp.old = std::move(s.logprobs);
        resp.reference = reference->logprob(rec.obs, s.tokens);
        RolloutRecord rr;
        rr.step = step;
        rr.query_id = rec.id;
        rr.index = static_cast<int>(g);
        rr.text = text;
        rr.reward = rb;
        groups[b].responses[g] = std::move(resp);
        tokens[b][g] = std::move(s.tokens);
        recs[b][g] = std::move(rr);
      });

      LedgerEntry e;
      e.stage = "pgrpo";
      e.step = step;
      double reward_sum = 0.0;
      long p_count = 0, r_count = 0, c_count = 0;
      bool any_signal = false;
      for (std::size_t b = 0; b < B; ++b) {
        groups[b].query_id = records[order[start + b]].id;
        groups[b].normalize_advantages(config.std_kind);
        for (std::size_t g = 0; g < G; ++g) {
          const auto& resp = groups[b].responses[g];
          any_signal = any_signal || resp.advantage != 0.0;
          recs[b][g].advantage = resp.advantage;
          reward_sum += recs[b][g].reward.total;
          p_count += recs[b][g].reward.flags.planning;
          r_count += recs[b][g].reward.flags.reflection;
          c_count += recs[b][g].reward.flags.correct;
        }
      }
      const double n = static_cast<double>(B * G);
      e.mean_reward = reward_sum / n;
      e.p_rate = static_cast<double>(p_count) / n;
      e.r_rate = static_cast<double>(r_count) / n;
      e.accuracy = static_cast<double>(c_count) / n;

      if (!any_signal) {
        e.skipped = true;
        ++result.skipped_steps;
      } else {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double scale = 1.0 / static_cast<double>(B);
        double loss = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          loss += scale * grpo_loss(groups[b], gopt);
          auto dl = grpo_loss_grad(groups[b], gopt);
          const Observation& obs = records[order[start + b]].obs;
          for (std::size_t g = 0; g < G; ++g) {
            for (double& x : dl[g]) x *= scale;
            policy.accumulate_grad(obs, tokens[b][g], dl[g], grad);
          }
        }
        sgd_step(policy, grad, config.lr);
        e.loss = loss;
      }
      e.digest = param_digest(policy.parameters(), step_seed);
      ledger.append(e);
      for (auto& v : recs) {
        for (auto& r : v) result.rollouts.push_back(std::move(r));
      }
      ++step;
      if (config.max_steps > 0 && step >= config.max_steps) done = true;
    }
  }
  result.steps = step;
  result.final_policy = policy.snapshot();
  return result;
}

std::string rollouts_to_jsonl(std::span<const RolloutRecord> rollouts) {
  std::string out;
  for (const auto& r : rollouts) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["query_id"] = r.query_id;
    j["index"] = r.index;
    j["text"] = r.text;
    j["correct"] = r.reward.flags.correct;
    j["planning"] = r.reward.flags.planning;
    j["reflection"] = r.reward.flags.reflection;
    j["pattern"] = r.reward.pattern;
    j["reflection_score"] = r.reward.reflection;
    j["format"] = r.reward.format;
    j["total"] = r.reward.total;
    j["advantage"] = r.advantage;
    out += j.dump() + "\n";
  }
  return out;
}

std::map<int, double> mean_reward_by_step(std::span<const RolloutRecord> rollouts) {
  std::map<int, std::pair<double, long>> acc;
  for (const auto& r : rollouts) {
    auto& [s, n] = acc[r.step];
    s += r.reward.total;
    ++n;
  }
  std::map<int, double> out;
  for (const auto& [step, sn] : acc) out[step] = sn.first / static_cast<double>(sn.second);
  return out;
}

}  // namespace patternrl
