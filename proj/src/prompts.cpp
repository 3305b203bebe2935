#include "patternrl/prompts.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace patternrl::prompts {
namespace embedded {
extern const std::string_view pairwise_eval;
extern const std::string_view reflection_reward;
extern const std::string_view score_eval;
extern const std::string_view stage1;
extern const std::string_view stage2;
extern const std::string_view stage3;
}  // namespace embedded

std::string_view stage1() { return embedded::stage1; }
std::string_view stage2() { return embedded::stage2; }
std::string_view stage3() { return embedded::stage3; }
std::string_view score_eval() { return embedded::score_eval; }
std::string_view pairwise_eval() { return embedded::pairwise_eval; }
std::string_view reflection_reward() { return embedded::reflection_reward; }

std::string load(std::string_view name, const std::filesystem::path& override_dir) {
  if (!override_dir.empty()) {
    const auto path = override_dir / (std::string(name) + ".txt");
    if (std::filesystem::exists(path)) {
      std::ifstream in(path, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    }
  }
  if (name == "stage1") return std::string(stage1());
  if (name == "stage2") return std::string(stage2());
  if (name == "stage3") return std::string(stage3());
  if (name == "score_eval") return std::string(score_eval());
  if (name == "pairwise_eval") return std::string(pairwise_eval());
  if (name == "reflection_reward") return std::string(reflection_reward());
  throw std::invalid_argument("unknown prompt template: " + std::string(name));
}

}  // namespace patternrl::prompts
