#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace crispedge {

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string doc;
};

/// Every recognized key in display order.
const std::vector<ConfigKey>& config_keys();

/// Namespaced `key = value` settings layered over the documented defaults.
/// Later layers win: defaults, config file, `--set`, dedicated flags.
class Config {
 public:
  Config();

  /// Parses `key = value` lines; `#` starts a comment. ConfigError names the
  /// line on a syntax error or unknown key.
  void merge_text(std::string_view text, const std::string& source);
  void merge_file(const std::filesystem::path& path);
  /// `key=value`, as given to --set.
  void merge_assignment(std::string_view assignment, const std::string& source);
  void set(const std::string& key, const std::string& value, const std::string& source);

  [[nodiscard]] const std::string& get(const std::string& key) const;
  [[nodiscard]] long get_int(const std::string& key) const;
  [[nodiscard]] std::uint64_t get_u64(const std::string& key) const;
  [[nodiscard]] double get_double(const std::string& key) const;
  /// Comma-separated doubles or ints; an empty value is an empty list.
  [[nodiscard]] std::vector<double> get_doubles(const std::string& key) const;
  [[nodiscard]] std::vector<int> get_ints(const std::string& key) const;
  [[nodiscard]] std::vector<std::string> get_strings(const std::string& key) const;

  /// One `key = value  # source` line per key with the given prefixes
  /// (all keys when empty).
  void show(std::ostream& os, const std::vector<std::string>& prefixes = {}) const;
  /// Plain `key = value` lines for the given prefixes, re-readable by merge_text.
  [[nodiscard]] std::string format(const std::vector<std::string>& prefixes) const;

 private:
  struct Entry {
    std::string value;
    std::string source;
  };
  std::map<std::string, Entry> values_;
};

}  // namespace crispedge
