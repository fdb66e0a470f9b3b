#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridse {

// Raised for malformed or inconsistent configuration input; the CLI maps it
// to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// INI-style `key = value` file with [section] headers and '#' comments.
// Keys are stored flattened as "section.key" ("" section for the preamble).
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  long long get_long(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // comma-separated list of doubles
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;

  // Directory of the file this config was loaded from; used to resolve
  // relative paths mentioned inside it. Empty when parsed from a string.
  std::string base_dir;
  std::string resolve_path(const std::string& p) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace gridse
