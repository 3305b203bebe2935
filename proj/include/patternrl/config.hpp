#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace patternrl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat key-value configuration with section-prefixed keys:
//
//   # comment
//   pgrpo.G = 4
//   judge.mode = stub
//
// Later assignments (including command-line overrides) replace earlier ones.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  // Accepts "dotted.key=value".
  void apply_override(std::string_view assignment);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string require(const std::string& key) const;

  // Every key starting with `prefix`, prefix stripped.
  std::map<std::string, std::string> section(const std::string& prefix) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  // Sorted "key = value" lines; parse(dump()) reproduces the config.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace patternrl
