#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace treefield {

// Line-oriented `key = value` configuration. Full-line `#` comments and
// blank lines are ignored; duplicate or malformed keys are rejected.
// Entries keep insertion order so serialization is deterministic.
class ConfigMap {
 public:
  static ConfigMap parse_string(const std::string& text,
                                const std::string& origin = "<string>");
  static ConfigMap parse_file(const std::string& path);

  bool has(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  // Typed getters throw ConfigError on absence or on unparseable values;
  // the *_or forms substitute a default when the key is absent.
  std::string get_str(const std::string& key) const;
  std::string get_str_or(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int_or(const std::string& key, int64_t fallback) const;
  uint64_t get_u64(const std::string& key) const;
  uint64_t get_u64_or(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;

  // Insert or overwrite.
  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, int64_t value);
  void set_u64(const std::string& key, uint64_t value);
  void set_double(const std::string& key, double value);

  // Throws ConfigError naming the first key not in `allowed`.
  void require_known(const std::vector<std::string>& allowed) const;

  // Canonical "key = value\n" lines in insertion order.
  std::string serialize() const;
  void save(const std::string& path) const;

 private:
  const std::string* find(const std::string& key) const;

  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace treefield
