#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace patternrl::prompts {

// Built-in templates, embedded from prompts/*.txt at build time.
std::string_view stage1();
std::string_view stage2();
std::string_view stage3();
std::string_view score_eval();
std::string_view pairwise_eval();
std::string_view reflection_reward();

// Looks up a built-in template by file stem ("stage1", "score_eval", ...).
// When `override_dir` is non-empty and contains <name>.txt, that file wins.
std::string load(std::string_view name, const std::filesystem::path& override_dir = {});

inline constexpr std::string_view kUserQuestion =
    "Please determine the authenticity of this image.";

}  // namespace patternrl::prompts
