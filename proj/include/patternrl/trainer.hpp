#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "patternrl/config.hpp"
#include "patternrl/objectives.hpp"
#include "patternrl/policy.hpp"
#include "patternrl/reward.hpp"

namespace patternrl {

struct SftExample {
  std::string id;
  Observation obs;
  std::vector<TokenId> tokens;
};

struct PreferenceExample {
  std::string id;
  Observation obs;
  std::vector<TokenId> chosen;
  std::vector<TokenId> rejected;
};

struct RlRecord {
  std::string id;
  Observation obs;
  Verdict answer = Verdict::kFake;
};

struct SftConfig {
  int epochs = 3;
  double lr = 5e-5;
  int batch = 64;
  SftReduction reduction = SftReduction::kTokenMean;
};

struct MipoConfig {
  int epochs = 2;
  double lr = 5e-5;
  int batch = 64;
  double beta = 0.0;
};

struct PgrpoConfig {
  int epochs = 2;
  double lr = 1e-6;
  int batch = 16;
  int group_size = 4;  // G
  double temperature = 1.0;
  double epsilon = 0.2;
  double beta_prime = 0.0;
  GrpoNormalization normalization = GrpoNormalization::kGroupTokens;
  StdKind std_kind = StdKind::kPopulation;
  RewardConfig reward;
  int max_steps = 0;  // 0 = run every batch of every epoch
};

struct TrainConfig {
  SftConfig sft;
  MipoConfig mipo;
  PgrpoConfig pgrpo;
  std::map<std::string, std::string> adapter{{"rank", "128"}, {"alpha", "256"}};
  std::uint64_t seed = 0;
  int workers = 1;

  // Learning rates > 0, G >= 2, batch sizes >= 1, temperature > 0.
  void validate() const;

  static TrainConfig from_config(const Config& cfg);
  void to_config(Config& cfg) const;
};

struct LedgerEntry {
  std::string stage;
  int step = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double p_rate = 0.0;
  double r_rate = 0.0;
  double accuracy = 0.0;
  double margin = 0.0;  // MiPO mean margin before the update
  bool skipped = false;
  std::uint64_t digest = 0;  // parameters after the step plus the step seed

  bool operator==(const LedgerEntry&) const = default;
};

// Append-only per-step log.
class RunLedger {
 public:
  void append(const LedgerEntry& e);
  std::vector<LedgerEntry> entries() const;
  std::vector<LedgerEntry> stage(const std::string& name) const;
  std::uint64_t digest() const;
  std::string to_jsonl() const;
  void write(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mu_;
  std::vector<LedgerEntry> entries_;
};

struct RolloutRecord {
  int step = 0;
  std::string query_id;
  int index = 0;
  std::string text;
  RewardBreakdown reward;
  double advantage = 0.0;
};

struct PgrpoResult {
  PolicySnapshot final_policy;
  std::vector<RolloutRecord> rollouts;
  int steps = 0;
  int skipped_steps = 0;
};

// Plain SGD on the token-level NLL. Returns the last-step snapshot.
PolicySnapshot train_sft(TrainablePolicy& policy, std::span<const SftExample> data,
                         const SftConfig& config, std::uint64_t seed, RunLedger& ledger);

// Minimizes the preference loss against `reference` (normally the SFT
// snapshot). The reference is only read.
PolicySnapshot train_mipo(TrainablePolicy& policy, const PolicySnapshot& reference,
                          std::span<const PreferenceExample> pairs, const MipoConfig& config,
                          std::uint64_t seed, RunLedger& ledger);

// Rollout, score, normalize, update; one update per batch. `reference` is
// the KL anchor (cold-start snapshot).
PgrpoResult train_pgrpo(TrainablePolicy& policy, const PolicySnapshot& reference,
                        std::span<const RlRecord> records, const RewardEngine& rewards,
                        const PgrpoConfig& config, std::uint64_t seed, RunLedger& ledger,
                        int workers = 1);

std::string rollouts_to_jsonl(std::span<const RolloutRecord> rollouts);

// Mean total reward per step recomputed from persisted rollouts.
std::map<int, double> mean_reward_by_step(std::span<const RolloutRecord> rollouts);

}  // namespace patternrl
