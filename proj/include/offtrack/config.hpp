#pragma once

// Reader for the TOML-style configuration files used across the project.
// Supported subset: comments, [table] and [[array.of.tables]] headers,
// `key = value` where value is an integer, float, bool, "string", or a
// single-line array of numbers or strings.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "offtrack/common.hpp"

namespace offtrack {

using ConfigValue = std::variant<std::int64_t, double, bool, std::string, std::vector<double>,
                                 std::vector<std::string>>;

class ConfigTable {
 public:
  bool contains(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, ConfigValue v) { values_[key] = std::move(v); }
  const std::map<std::string, ConfigValue>& values() const { return values_; }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
    if (auto* d = std::get_if<double>(&it->second)) return *d;
    throw ConfigError("key '" + key + "' is not a number");
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* i = std::get_if<std::int64_t>(&it->second)) return *i;
    throw ConfigError("key '" + key + "' is not an integer");
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* b = std::get_if<bool>(&it->second)) return *b;
    throw ConfigError("key '" + key + "' is not a bool");
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* s = std::get_if<std::string>(&it->second)) return *s;
    throw ConfigError("key '" + key + "' is not a string");
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* v = std::get_if<std::vector<double>>(&it->second)) return *v;
    throw ConfigError("key '" + key + "' is not a numeric array");
  }

  std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* v = std::get_if<std::vector<std::string>>(&it->second)) return *v;
    if (auto* s = std::get_if<std::string>(&it->second)) return {*s};
    if (auto* v = std::get_if<std::vector<double>>(&it->second); v != nullptr && v->empty()) return {};
    throw ConfigError("key '" + key + "' is not a string array");
  }

 private:
  std::map<std::string, ConfigValue> values_;
};

class Config {
 public:
  /// Named table; the root table is "".
  const ConfigTable& table(const std::string& name) const {
    static const ConfigTable kEmpty;
    auto it = tables_.find(name);
    return it == tables_.end() ? kEmpty : it->second;
  }
  bool has_table(const std::string& name) const { return tables_.count(name) > 0; }

  const std::vector<ConfigTable>& array(const std::string& name) const {
    static const std::vector<ConfigTable> kEmpty;
    auto it = arrays_.find(name);
    return it == arrays_.end() ? kEmpty : it->second;
  }

  ConfigTable& mutable_table(const std::string& name) { return tables_[name]; }
  ConfigTable& append_array(const std::string& name) {
    auto& v = arrays_[name];
    v.emplace_back();
    return v.back();
  }

 private:
  std::map<std::string, ConfigTable> tables_;
  std::map<std::string, std::vector<ConfigTable>> arrays_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

inline std::optional<ConfigValue> parse_scalar(const std::string& text) {
  if (text == "true") return ConfigValue(true);
  if (text == "false") return ConfigValue(false);
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"')
    return ConfigValue(text.substr(1, text.size() - 2));
  const bool looks_float = text.find_first_of(".eE") != std::string::npos ||
                           text == "inf" || text == "-inf" || text == "nan";
  if (!looks_float) {
    std::int64_t v = 0;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data() + (text[0] == '+' ? 1 : 0), end, v);
    if (ec == std::errc() && ptr == end) return ConfigValue(v);
  }
  char* end = nullptr;
  const double d = std::strtod(text.c_str(), &end);
  if (!text.empty() && end == text.c_str() + text.size()) return ConfigValue(d);
  return std::nullopt;
}

inline std::vector<std::string> split_array_items(const std::string& inner) {
  std::vector<std::string> items;
  std::string cur;
  bool in_string = false;
  for (char ch : inner) {
    if (ch == '"') in_string = !in_string;
    if (ch == ',' && !in_string) {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty()) items.push_back(trim(cur));
  return items;
}

}  // namespace detail

inline Config parse_config(std::istream& in) {
  Config cfg;
  ConfigTable* current = &cfg.mutable_table("");
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    if (line.rfind("[[", 0) == 0) {
      if (line.size() < 4 || line.substr(line.size() - 2) != "]]")
        throw ParseError("malformed array-of-tables header", line_no);
      current = &cfg.append_array(detail::trim(line.substr(2, line.size() - 4)));
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("malformed table header", line_no);
      current = &cfg.mutable_table(detail::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string text = detail::trim(line.substr(eq + 1));
    if (key.empty() || text.empty()) throw ParseError("empty key or value", line_no);
    if (text.front() == '[') {
      if (text.back() != ']') throw ParseError("unterminated array", line_no);
      const auto items = detail::split_array_items(text.substr(1, text.size() - 2));
      std::vector<double> nums;
      std::vector<std::string> strs;
      for (const auto& item : items) {
        auto v = detail::parse_scalar(item);
        if (!v) throw ParseError("bad array item '" + item + "'", line_no);
        if (auto* i = std::get_if<std::int64_t>(&*v)) {
          nums.push_back(static_cast<double>(*i));
        } else if (auto* d = std::get_if<double>(&*v)) {
          nums.push_back(*d);
        } else if (auto* s = std::get_if<std::string>(&*v)) {
          strs.push_back(*s);
        } else {
          throw ParseError("unsupported array item '" + item + "'", line_no);
        }
      }
      if (!nums.empty() && !strs.empty()) throw ParseError("mixed array", line_no);
      if (!strs.empty()) {
        current->set(key, strs);
      } else {
        current->set(key, nums);
      }
      continue;
    }
    auto v = detail::parse_scalar(text);
    if (!v) throw ParseError("bad value '" + text + "'", line_no);
    current->set(key, *v);
  }
  return cfg;
}

inline Config parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

/// Resolves the config path: an explicit --config wins, then OFFTRACK_CONFIG.
/// Empty result means "use defaults".
inline std::string resolve_config_path(const std::string& cli_path) {
  if (!cli_path.empty()) return cli_path;
  if (const char* env = std::getenv("OFFTRACK_CONFIG"); env != nullptr && *env != '\0')
    return env;
  return {};
}

}  // namespace offtrack
