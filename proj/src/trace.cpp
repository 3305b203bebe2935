#include "patternrl/trace.hpp"

#include <algorithm>
#include <cctype>

namespace patternrl {
namespace {

constexpr std::array<std::string_view, 5> kTagNames = {
    "fast", "planning", "reasoning", "reflection", "conclusion"};

struct TagToken {
  std::size_t pos = std::string_view::npos;
  std::size_t len = 0;
  PatternTag tag = PatternTag::kFast;
  bool closing = false;
};

// Finds the next <name> or </name> for any of the five tag names.
TagToken next_tag_token(std::string_view text, std::size_t from) {
  for (std::size_t i = text.find('<', from); i != std::string_view::npos;
       i = text.find('<', i + 1)) {
    std::size_t j = i + 1;
    bool closing = false;
    if (j < text.size() && text[j] == '/') {
      closing = true;
      ++j;
    }
    const std::size_t end = text.find('>', j);
    if (end == std::string_view::npos) return {};
    auto tag = tag_from_name(text.substr(j, end - j));
    if (tag) return TagToken{i, end - i + 1, *tag, closing};
  }
  return {};
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

bool contains_word(std::string_view text, std::string_view word) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (std::size_t pos = lowered.find(word); pos != std::string::npos;
       pos = lowered.find(word, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word_char(lowered[pos - 1]);
    const std::size_t after = pos + word.size();
    const bool right_ok = after >= lowered.size() || !is_word_char(lowered[after]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

}  // namespace

std::string_view tag_name(PatternTag tag) {
  return kTagNames[static_cast<std::size_t>(tag)];
}

std::optional<PatternTag> tag_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kTagNames.size(); ++i) {
    if (kTagNames[i] == name) return static_cast<PatternTag>(i);
  }
  return std::nullopt;
}

std::string_view verdict_name(Verdict v) {
  return v == Verdict::kFake ? "fake" : "real";
}

std::optional<Verdict> verdict_from_name(std::string_view name) {
  std::string lowered(trim(name));
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (lowered == "fake") return Verdict::kFake;
  if (lowered == "real") return Verdict::kReal;
  return std::nullopt;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

TraceParseError::TraceParseError(std::string tag, std::size_t offset,
                                 const std::string& what)
    : std::runtime_error(what), tag_(std::move(tag)), offset_(offset) {}

bool ReasoningTrace::has(PatternTag tag) const {
  return std::any_of(segments.begin(), segments.end(),
                     [tag](const Segment& s) { return s.tag == tag; });
}

std::vector<PatternTag> ReasoningTrace::tags() const {
  std::vector<PatternTag> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(s.tag);
  return out;
}

ReasoningTrace parse_trace(std::string_view text) {
  ReasoningTrace trace;
  trace.raw = std::string(text);
  std::size_t cursor = 0;
  while (true) {
    const TagToken open = next_tag_token(text, cursor);
    if (open.pos == std::string_view::npos) break;
    const std::string name(tag_name(open.tag));
    if (open.closing) {
      throw TraceParseError(name, open.pos,
                            "closing tag </" + name + "> without opener at offset " +
                                std::to_string(open.pos));
    }
    const std::size_t body_begin = open.pos + open.len;
    const TagToken close = next_tag_token(text, body_begin);
    if (close.pos == std::string_view::npos || !close.closing ||
        close.tag != open.tag) {
      throw TraceParseError(name, open.pos,
                            "unclosed tag <" + name + "> at offset " +
                                std::to_string(open.pos));
    }
    const std::string_view body = trim(text.substr(body_begin, close.pos - body_begin));
    if (!body.empty()) trace.segments.push_back({open.tag, std::string(body)});
    cursor = close.pos + close.len;
  }
  return trace;
}

bool validate_format(std::span<const PatternTag> tags) {
  using T = PatternTag;
  static const std::array<std::vector<T>, 4> kValid = {{
      {T::kFast, T::kReasoning, T::kConclusion},
      {T::kFast, T::kPlanning, T::kReasoning, T::kConclusion},
      {T::kFast, T::kReasoning, T::kReflection, T::kConclusion},
      {T::kFast, T::kPlanning, T::kReasoning, T::kReflection, T::kConclusion},
  }};
  return std::any_of(kValid.begin(), kValid.end(), [&](const std::vector<T>& v) {
    return std::equal(v.begin(), v.end(), tags.begin(), tags.end());
  });
}

bool validate_format(const ReasoningTrace& trace) {
  const auto tags = trace.tags();
  return validate_format(std::span<const PatternTag>(tags));
}

Verdict extract_verdict(const ReasoningTrace& trace) {
  const auto it = std::find_if(trace.segments.rbegin(), trace.segments.rend(),
                               [](const Segment& s) {
                                 return s.tag == PatternTag::kConclusion;
                               });
  if (it == trace.segments.rend()) {
    throw AmbiguousVerdictError("trace has no conclusion segment");
  }
  const bool fake = contains_word(it->text, "fake");
  const bool real = contains_word(it->text, "real");
  if (fake == real) {
    throw AmbiguousVerdictError("conclusion names " +
                                std::string(fake ? "both verdicts" : "no verdict") +
                                ": \"" + it->text + "\"");
  }
  return fake ? Verdict::kFake : Verdict::kReal;
}

std::optional<Verdict> try_extract_verdict(const ReasoningTrace& trace) noexcept {
  try {
    return extract_verdict(trace);
  } catch (...) {
    return std::nullopt;
  }
}

std::string serialize_trace(const ReasoningTrace& trace) {
  std::string out;
  for (const auto& s : trace.segments) {
    const auto name = tag_name(s.tag);
    out += '<';
    out += name;
    out += '>';
    out += s.text;
    out += "</";
    out += name;
    out += '>';
  }
  return out;
}

}  // namespace patternrl
