#include "patternrl/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "patternrl/trace.hpp"

namespace patternrl {
namespace toy_vocab {
namespace {

constexpr std::array<std::string_view, kSize> kWords = {
    "<eos>",        "<fast>",      "</fast>",      "<planning>", "</planning>",
    "<reasoning>",  "</reasoning>", "<reflection>", "</reflection>",
    "<conclusion>", "</conclusion>", "real",       "fake",       "skin",
    "texture",      "edge",        "lighting",     "shadow",     "eyes",
    "blur",         "color",       "noise",        "hair",       "background"};

}  // namespace

std::span<const std::string_view> words() { return kWords; }

std::string_view word(TokenId id) {
  if (id < 0 || id >= kSize) throw std::invalid_argument("token id out of range");
  return kWords[static_cast<std::size_t>(id)];
}

TokenId open_tag(int pattern_index) { return 1 + 2 * pattern_index; }
TokenId close_tag(int pattern_index) { return 2 + 2 * pattern_index; }
bool is_tag(TokenId id) { return id >= 1 && id <= 10; }
bool is_filler(TokenId id) { return id >= kFirstFiller && id < kSize; }

std::uint64_t hash() {
  std::uint64_t h = 1469598103934665603ull;
  for (auto w : kWords) {
    for (char c : w) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    h ^= '\n';
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace toy_vocab

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void check_token(TokenId id) {
  if (id < 0 || id >= toy_vocab::kSize) {
    throw std::invalid_argument("unknown token id " + std::to_string(id));
  }
}

void check_sequence(std::span<const TokenId> tokens) {
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    check_token(tokens[t]);
    if (tokens[t] == toy_vocab::kEos && t + 1 != tokens.size()) {
      throw std::invalid_argument("end-of-sequence token before the last position");
    }
  }
}

// log-softmax of `z` in place; returns nothing, z becomes log-probabilities.
template <std::size_t N>
void log_softmax(std::array<double, N>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (double& v : z) v -= lse;
}

}  // namespace

ToyPolicy::ToyPolicy(std::string name)
    : name_(std::move(name)), params_(kNumParams, 0.0) {}

ToyPolicy ToyPolicy::random(std::uint64_t seed, double scale, std::string name) {
  ToyPolicy p(std::move(name));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  for (double& w : p.params_) w = nd(rng);
  return p;
}

std::size_t ToyPolicy::param_index(int context, int feature, int token) {
  return (static_cast<std::size_t>(context) * kNumFeatures +
          static_cast<std::size_t>(feature)) *
             kVocab +
         static_cast<std::size_t>(token);
}

int ToyPolicy::context_class(std::span<const TokenId> prefix) {
  if (prefix.empty()) return 0;
  int open = 0;  // 0 = no open segment, 1..5 = pattern index + 1
  for (TokenId id : prefix) {
    if (toy_vocab::is_tag(id)) open = (id % 2 == 1) ? (id + 1) / 2 : 0;
  }
  const TokenId last = prefix.back();
  if (toy_vocab::is_tag(last)) return last;
  if (toy_vocab::is_filler(last)) return 11 + open;
  if (last == toy_vocab::kReal || last == toy_vocab::kFake) return 17 + open;
  throw std::invalid_argument("end-of-sequence token cannot precede another token");
}

void ToyPolicy::logits(int context, const Observation& obs,
                       std::array<double, kVocab>& out) const {
  std::array<int, 5> active{0, 0, 0, 0, 0};
  for (int i = 0; i < 4; ++i) {
    const int x = obs.features[static_cast<std::size_t>(i)];
    if (x < -1 || x > 1) throw std::invalid_argument("observation feature outside {-1,0,1}");
    active[static_cast<std::size_t>(i + 1)] = 1 + 3 * i + (x + 1);
  }
  out.fill(0.0);
  for (int j : active) {
    const double* row = &params_[param_index(context, j, 0)];
    for (int v = 0; v < kVocab; ++v) out[static_cast<std::size_t>(v)] += row[v];
  }
}

std::array<double, ToyPolicy::kVocab> ToyPolicy::next_logprobs(
    const Observation& obs, std::span<const TokenId> prefix) const {
  check_sequence(prefix);
  std::array<double, kVocab> z{};
  logits(context_class(prefix), obs, z);
  log_softmax(z);
  return z;
}

TokenLogProbs ToyPolicy::logprob(const Observation& obs,
                                 std::span<const TokenId> tokens) const {
  check_sequence(tokens);
  TokenLogProbs out;
  out.reserve(tokens.size());
  std::array<double, kVocab> z{};
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    logits(context_class(tokens.first(t)), obs, z);
    log_softmax(z);
    out.push_back(z[static_cast<std::size_t>(tokens[t])]);
  }
  return out;
}

SampleResult ToyPolicy::sample(const Observation& obs, double temperature,
                               std::uint64_t seed) const {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  std::mt19937_64 rng(seed);
  SampleResult out;
  std::array<double, kVocab> z{};
  std::array<double, kVocab> scaled{};
  while (static_cast<int>(out.tokens.size()) < kMaxLength) {
    logits(context_class(out.tokens), obs, z);
    for (int v = 0; v < kVocab; ++v) scaled[v] = z[v] / temperature;
    log_softmax(z);
    log_softmax(scaled);
    const double u = uniform01(rng);
    double acc = 0.0;
    TokenId pick = kVocab - 1;
    for (int v = 0; v < kVocab; ++v) {
      acc += std::exp(scaled[static_cast<std::size_t>(v)]);
      if (u < acc) {
        pick = v;
        break;
      }
    }
    // Guard against the cumulative sum stopping just short of 1.
    while (std::exp(scaled[static_cast<std::size_t>(pick)]) == 0.0 && pick > 0) --pick;
    out.tokens.push_back(pick);
    out.logprobs.push_back(z[static_cast<std::size_t>(pick)]);
    if (pick == toy_vocab::kEos) break;
  }
  return out;
}

PolicySnapshot ToyPolicy::snapshot() const {
  return std::make_shared<const ToyPolicy>(*this);
}

std::string ToyPolicy::render(std::span<const TokenId> tokens) const {
  std::string out;
  bool prev_word = false;
  for (TokenId id : tokens) {
    check_token(id);
    if (id == toy_vocab::kEos) break;
    const auto w = toy_vocab::word(id);
    if (toy_vocab::is_tag(id)) {
      out += w;
      prev_word = false;
    } else {
      if (prev_word) out += ' ';
      out += w;
      prev_word = true;
    }
  }
  return out;
}

std::vector<TokenId> ToyPolicy::tokenize(std::string_view text) const {
  const auto words = toy_vocab::words();
  std::vector<TokenId> out;
  auto lookup = [&](std::string_view w) {
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (words[i] == w) return static_cast<TokenId>(i);
    }
    throw std::invalid_argument("word outside the toy vocabulary: \"" + std::string(w) + "\"");
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    if (c == '<') {
      j = text.find('>', i);
      if (j == std::string_view::npos) throw std::invalid_argument("unterminated tag in text");
      ++j;
    } else {
      while (j < text.size() && text[j] != '<' &&
             !std::isspace(static_cast<unsigned char>(text[j]))) {
        ++j;
      }
    }
    out.push_back(lookup(text.substr(i, j - i)));
    i = j;
  }
  if (out.empty() || out.back() != toy_vocab::kEos) out.push_back(toy_vocab::kEos);
  return out;
}

void ToyPolicy::accumulate_grad(const Observation& obs, std::span<const TokenId> tokens,
                                std::span<const double> token_weights,
                                std::span<double> grad) const {
  check_sequence(tokens);
  if (token_weights.size() != tokens.size()) {
    throw std::invalid_argument("token weight count does not match token count");
  }
  if (grad.size() != kNumParams) throw std::invalid_argument("gradient buffer has wrong size");
  std::array<double, kVocab> z{};
  std::array<int, 5> active{};
  active[0] = 0;
  for (int i = 0; i < 4; ++i) {
    active[static_cast<std::size_t>(i + 1)] = 1 + 3 * i + (obs.features[static_cast<std::size_t>(i)] + 1);
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double w = token_weights[t];
    if (w == 0.0) continue;
    const int ctx = context_class(tokens.first(t));
    logits(ctx, obs, z);
    log_softmax(z);
    // d log p(y) / d z_v = [v == y] - p_v, and z_v is linear in each active row.
    for (int j : active) {
      double* row = &grad[param_index(ctx, j, 0)];
      for (int v = 0; v < kVocab; ++v) {
        const double ind = (v == tokens[t]) ? 1.0 : 0.0;
        row[v] += w * (ind - std::exp(z[static_cast<std::size_t>(v)]));
      }
    }
  }
}

std::vector<double> ToyPolicy::grad_logprob(const Observation& obs,
                                            std::span<const TokenId> tokens) const {
  std::vector<double> grad(kNumParams, 0.0);
  const std::vector<double> ones(tokens.size(), 1.0);
  accumulate_grad(obs, tokens, ones, grad);
  return grad;
}

std::string ToyPolicy::serialize() const {
  std::ostringstream out;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(toy_vocab::hash()));
  out << "vocab_hash " << hex << '\n';
  out << "shape " << kNumClasses << ' ' << kNumFeatures << ' ' << kVocab << '\n';
  char buf[64];
  for (double w : params_) {
    const auto res = std::to_chars(buf, buf + sizeof buf, w);
    out.write(buf, res.ptr - buf);
    out << '\n';
  }
  return out.str();
}

ToyPolicy ToyPolicy::deserialize(std::string_view text, std::string name) {
  std::istringstream in{std::string(text)};
  std::string key, hash_hex;
  if (!(in >> key >> hash_hex) || key != "vocab_hash") {
    throw std::runtime_error("policy file: missing vocab_hash header");
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(toy_vocab::hash()));
  if (hash_hex != hex) throw std::runtime_error("policy file: vocabulary hash mismatch");
  int c = 0, f = 0, v = 0;
  if (!(in >> key >> c >> f >> v) || key != "shape") {
    throw std::runtime_error("policy file: missing shape header");
  }
  if (c != kNumClasses || f != kNumFeatures || v != kVocab) {
    throw std::runtime_error("policy file: shape mismatch");
  }
  ToyPolicy p(std::move(name));
  std::string tok;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (!(in >> tok)) throw std::runtime_error("policy file: truncated parameter list");
    double w = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), w);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw std::runtime_error("policy file: bad number \"" + tok + "\"");
    }
    p.params_[i] = w;
  }
  if (in >> tok) throw std::runtime_error("policy file: trailing data");
  return p;
}

void ToyPolicy::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize();
}

ToyPolicy ToyPolicy::load(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), std::move(name));
}

}  // namespace patternrl
