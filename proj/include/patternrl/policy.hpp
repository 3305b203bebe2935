#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patternrl/objectives.hpp"

namespace patternrl {

using TokenId = int;

// Model input. `features` drive the bundled toy policy (each in {-1, 0, 1});
// `image_ref` identifies the image for real-model integrations and judges.
struct Observation {
  std::array<int, 4> features{};
  std::string image_ref;

  bool operator==(const Observation&) const = default;
};

struct SampleResult {
  std::vector<TokenId> tokens;
  TokenLogProbs logprobs;  // untempered, one per token
};

// Contract consumed by objectives and the trainer. Evaluation is const and
// safe to call concurrently; snapshots are immutable.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::string_view name() const = 0;

  // Teacher-forced per-token log-probabilities. Throws std::invalid_argument
  // for tokens outside the vocabulary.
  virtual TokenLogProbs logprob(const Observation& obs,
                                std::span<const TokenId> tokens) const = 0;

  // Autoregressive sampling at `temperature` (> 0). Log-probs are reported
  // under the untempered distribution.
  virtual SampleResult sample(const Observation& obs, double temperature,
                              std::uint64_t seed) const = 0;

  virtual std::span<const double> parameters() const = 0;
  virtual std::shared_ptr<const Policy> snapshot() const = 0;

  // Text form of a token sequence, as fed to the trace parser.
  virtual std::string render(std::span<const TokenId> tokens) const = 0;
  virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;
};

using PolicySnapshot = std::shared_ptr<const Policy>;

// A policy the trainer can update with plain gradient steps.
class TrainablePolicy : public Policy {
 public:
  // grad += sum_t weights[t] * d log pi(tokens[t]) / d params
  virtual void accumulate_grad(const Observation& obs, std::span<const TokenId> tokens,
                               std::span<const double> token_weights,
                               std::span<double> grad) const = 0;
  virtual std::span<double> mutable_parameters() = 0;
};

namespace toy_vocab {

inline constexpr TokenId kEos = 0;
inline constexpr TokenId kReal = 11;
inline constexpr TokenId kFake = 12;
inline constexpr TokenId kFirstFiller = 13;
inline constexpr int kSize = 24;

std::span<const std::string_view> words();
std::string_view word(TokenId id);
TokenId open_tag(int pattern_index);   // pattern_index in 0..4, PatternTag order
TokenId close_tag(int pattern_index);
bool is_tag(TokenId id);
bool is_filler(TokenId id);
std::uint64_t hash();

}  // namespace toy_vocab

// Linear-softmax policy over the 24-symbol toy vocabulary. The logits for
// the next token depend on a context class (derived from the previous token
// and the currently open segment) and on a one-hot encoding of the four
// ternary observation features:
//   z[v] = sum_j W[class][j][v] * phi_j(obs),  phi = [1, onehot(x1..x4)]
class ToyPolicy final : public TrainablePolicy {
 public:
  static constexpr int kNumClasses = 23;
  static constexpr int kNumFeatures = 13;
  static constexpr int kVocab = toy_vocab::kSize;
  static constexpr int kMaxLength = 64;
  static constexpr std::size_t kNumParams =
      static_cast<std::size_t>(kNumClasses) * kNumFeatures * kVocab;

  // All-zero parameters: every next-token distribution is uniform.
  explicit ToyPolicy(std::string name = "toy");
  static ToyPolicy random(std::uint64_t seed, double scale, std::string name = "toy");

  std::string_view name() const override { return name_; }
  TokenLogProbs logprob(const Observation& obs,
                        std::span<const TokenId> tokens) const override;
  SampleResult sample(const Observation& obs, double temperature,
                      std::uint64_t seed) const override;
  std::span<const double> parameters() const override { return params_; }
  std::span<double> mutable_parameters() override { return params_; }
  PolicySnapshot snapshot() const override;
  std::string render(std::span<const TokenId> tokens) const override;
  std::vector<TokenId> tokenize(std::string_view text) const override;

  void accumulate_grad(const Observation& obs, std::span<const TokenId> tokens,
                       std::span<const double> token_weights,
                       std::span<double> grad) const override;

  // Gradient of sum_t log pi(tokens[t]).
  std::vector<double> grad_logprob(const Observation& obs,
                                   std::span<const TokenId> tokens) const;

  // Untempered next-token log-distribution after `prefix`.
  std::array<double, kVocab> next_logprobs(const Observation& obs,
                                           std::span<const TokenId> prefix) const;

  // Context class of the position following `prefix`.
  static int context_class(std::span<const TokenId> prefix);
  static std::size_t param_index(int context, int feature, int token);

  // Flat text format: "vocab_hash <hex>" and "shape <c> <f> <v>" header lines
  // followed by one shortest-round-trip decimal per line.
  std::string serialize() const;
  static ToyPolicy deserialize(std::string_view text, std::string name = "toy");
  void save(const std::filesystem::path& path) const;
  static ToyPolicy load(const std::filesystem::path& path, std::string name = "toy");

 private:
  void logits(int context, const Observation& obs, std::array<double, kVocab>& out) const;

  std::string name_;
  std::vector<double> params_;
};

}  // namespace patternrl
