#include "treefield/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "treefield/errors.hpp"

namespace treefield {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
           c == '-' || c == '.';
  });
}

}  // namespace

ConfigMap ConfigMap::parse_string(const std::string& text,
                                  const std::string& origin) {
  ConfigMap cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got \"" + t + "\"");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!valid_key(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": invalid key \"" + key + "\"");
    if (cfg.has(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": duplicate key \"" + key + "\"");
    cfg.entries_.emplace_back(key, value);
  }
  return cfg;
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

const std::string* ConfigMap::find(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return &v;
  return nullptr;
}

bool ConfigMap::has(const std::string& key) const { return find(key) != nullptr; }

std::string ConfigMap::get_str(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw ConfigError("missing config key \"" + key + "\"");
  return *v;
}

std::string ConfigMap::get_str_or(const std::string& key,
                                  const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

namespace {

int64_t parse_int(const std::string& key, const std::string& text) {
  int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("config key \"" + key + "\": \"" + text +
                      "\" is not an integer");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& text) {
  uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("config key \"" + key + "\": \"" + text +
                      "\" is not an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    size_t pos = 0;
    const double out = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key \"" + key + "\": \"" + text +
                      "\" is not a number");
  }
}

}  // namespace

int64_t ConfigMap::get_int(const std::string& key) const {
  return parse_int(key, get_str(key));
}
int64_t ConfigMap::get_int_or(const std::string& key, int64_t fallback) const {
  const std::string* v = find(key);
  return v ? parse_int(key, *v) : fallback;
}
uint64_t ConfigMap::get_u64(const std::string& key) const {
  return parse_u64(key, get_str(key));
}
uint64_t ConfigMap::get_u64_or(const std::string& key, uint64_t fallback) const {
  const std::string* v = find(key);
  return v ? parse_u64(key, *v) : fallback;
}
double ConfigMap::get_double(const std::string& key) const {
  return parse_double(key, get_str(key));
}
double ConfigMap::get_double_or(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  return v ? parse_double(key, *v) : fallback;
}

bool ConfigMap::get_bool_or(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ConfigError("config key \"" + key + "\": \"" + *v +
                    "\" is not a boolean (use true/false)");
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw ConfigError("invalid config key \"" + key + "\"");
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void ConfigMap::set_int(const std::string& key, int64_t value) {
  set(key, std::to_string(value));
}
void ConfigMap::set_u64(const std::string& key, uint64_t value) {
  set(key, std::to_string(value));
}
void ConfigMap::set_double(const std::string& key, double value) {
  std::ostringstream out;
  out.precision(17);
  out << value;
  set(key, out.str());
}

void ConfigMap::require_known(const std::vector<std::string>& allowed) const {
  for (const auto& [k, v] : entries_) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError("unknown config key \"" + k + "\"");
  }
}

std::string ConfigMap::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void ConfigMap::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << serialize();
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace treefield
