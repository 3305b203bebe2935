#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace patternrl {

// The five thinking patterns. Tag names on the wire are the lowercase
// spellings returned by tag_name().
enum class PatternTag { kFast, kPlanning, kReasoning, kReflection, kConclusion };

inline constexpr std::array<PatternTag, 5> kAllTags = {
    PatternTag::kFast, PatternTag::kPlanning, PatternTag::kReasoning,
    PatternTag::kReflection, PatternTag::kConclusion};

std::string_view tag_name(PatternTag tag);
std::optional<PatternTag> tag_from_name(std::string_view name);

enum class Verdict { kReal, kFake };

std::string_view verdict_name(Verdict v);
// Accepts "real"/"fake" in any case; nullopt otherwise.
std::optional<Verdict> verdict_from_name(std::string_view name);

struct Segment {
  PatternTag tag;
  std::string text;  // trimmed, non-empty, free of tag markup

  bool operator==(const Segment&) const = default;
};

struct ReasoningTrace {
  std::vector<Segment> segments;
  std::string raw;

  bool has(PatternTag tag) const;
  std::vector<PatternTag> tags() const;
};

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::string tag, std::size_t offset, const std::string& what);

  const std::string& tag() const { return tag_; }
  std::size_t offset() const { return offset_; }

 private:
  std::string tag_;
  std::size_t offset_;
};

class AmbiguousVerdictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Collects every well-formed <tag>...</tag> region in source order. Text
// outside tags is ignored and regions that are empty after trimming are
// dropped. Throws TraceParseError for an opening tag with no matching close
// before the next tag token, or a closing tag with no opener.
ReasoningTrace parse_trace(std::string_view text);

// True iff the tag sequence is one of the four admitted pattern
// combinations:
//   fast, reasoning, conclusion
//   fast, planning, reasoning, conclusion
//   fast, reasoning, reflection, conclusion
//   fast, planning, reasoning, reflection, conclusion
bool validate_format(std::span<const PatternTag> tags);
bool validate_format(const ReasoningTrace& trace);

// Verdict from the last conclusion segment: whole-word, case-insensitive
// match of "fake"/"real". Exactly one keyword must be present.
Verdict extract_verdict(const ReasoningTrace& trace);
std::optional<Verdict> try_extract_verdict(const ReasoningTrace& trace) noexcept;

std::string serialize_trace(const ReasoningTrace& trace);

std::string_view trim(std::string_view s);

}  // namespace patternrl
