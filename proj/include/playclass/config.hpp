#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>

#include "json.hpp"

#include "playclass/dataset_io.hpp"
#include "playclass/error.hpp"
#include "playclass/numeric.hpp"

namespace playclass {

// A TOML subset: `[table]` and `[table.sub]` headers, `key = value` with
// bare or quoted keys, basic and literal strings, integers, floats,
// booleans, and single-line arrays of those. `#` starts a comment outside
// strings. Anything else is a ParseError with its line number.

namespace detail {

class TomlLine {
 public:
  TomlLine(std::string_view s, std::size_t line) : s_(s), line_(line) {}

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool at_end_or_comment() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError("config: " + what, line_); }

  std::string key() {
    skip_ws();
    if (pos_ < s_.size() && (s_[pos_] == '"' || s_[pos_] == '\'')) return string();
    const auto start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-'))
      ++pos_;
    if (pos_ == start) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::vector<std::string> dotted_key() {
    std::vector<std::string> parts{key()};
    while (eat('.')) parts.push_back(key());
    return parts;
  }

  nlohmann::json value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"' || c == '\'') return string();
    if (c == '[') {
      ++pos_;
      auto arr = nlohmann::json::array();
      if (eat(']')) return arr;
      for (;;) {
        arr.push_back(value());
        if (eat(']')) break;
        expect(',');
        if (eat(']')) break;  // trailing comma
      }
      return arr;
    }
    const auto start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#' && s_[pos_] != ' ' &&
           s_[pos_] != '\t')
      ++pos_;
    std::string tok(s_.substr(start, pos_ - start));
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char ch : tok)
      if (ch != '_') digits += ch;
    if (digits.size() > 1 && digits[0] == '+') digits.erase(0, 1);
    if (digits.empty()) fail("missing value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "nan" ||
                          digits == "-inf";
    try {
      if (is_float) return parse_double(digits, line_);
      return parse_int<long long>(digits, line_);
    } catch (const ParseError&) {
      fail("unsupported value '" + tok + "'");
    }
  }

 private:
  std::string string() {
    const char q = s_[pos_++];
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != q) {
      char c = s_[pos_++];
      if (q == '"' && c == '\\') {
        if (pos_ >= s_.size()) fail("unterminated string");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '\\': c = '\\'; break;
          case '"': c = '"'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out += c;
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_;
};

}  // namespace detail

inline nlohmann::json parse_toml(std::string_view text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::set<std::string> seen_tables;
  std::size_t ln = 0;
  for (auto raw : lines_of(text)) {
    ++ln;
    detail::TomlLine line(raw, ln);
    if (line.at_end_or_comment()) continue;
    if (line.eat('[')) {
      if (line.eat('[')) line.fail("arrays of tables are not supported");
      const auto path = line.dotted_key();
      line.expect(']');
      if (!line.at_end_or_comment()) line.fail("trailing characters after table header");
      std::string joined;
      table = &root;
      for (const auto& p : path) {
        joined += (joined.empty() ? "" : ".") + p;
        auto& next = (*table)[p];
        if (next.is_null()) next = nlohmann::json::object();
        if (!next.is_object()) line.fail("'" + joined + "' is already a value");
        table = &next;
      }
      if (!seen_tables.insert(joined).second) line.fail("table [" + joined + "] defined twice");
      continue;
    }
    const auto path = line.dotted_key();
    line.expect('=');
    auto v = line.value();
    if (!line.at_end_or_comment()) line.fail("trailing characters after value");
    nlohmann::json* t = table;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      auto& next = (*t)[path[i]];
      if (next.is_null()) next = nlohmann::json::object();
      if (!next.is_object()) line.fail("'" + path[i] + "' is already a value");
      t = &next;
    }
    if (t->contains(path.back())) line.fail("key '" + path.back() + "' defined twice");
    (*t)[path.back()] = std::move(v);
  }
  return root;
}

inline nlohmann::json load_toml(const std::filesystem::path& path) { return parse_toml(read_file(path)); }

/// Typed lookups on a parsed table that track which keys were consumed, so
/// leftovers can be reported as unknown.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string prefix = "") : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw UsageError("config: '" + prefix_ + "' must be a table");
  }

  bool has(const std::string& k) const { return j_.contains(k); }

  template <class T>
  T get(const std::string& k, T fallback) {
    used_.insert(k);
    if (!j_.contains(k)) return fallback;
    const auto& v = j_.at(k);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) bad(k, "a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) bad(k, "an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) bad(k, "a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) bad(k, "a string");
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const auto& e) { return e.is_string(); }))
        bad(k, "an array of strings");
    }
    return v.get<T>();
  }

  ConfigReader table(const std::string& k) {
    used_.insert(k);
    static const nlohmann::json empty = nlohmann::json::object();
    return ConfigReader(j_.contains(k) ? j_.at(k) : empty, name(k));
  }

  /// Throws UsageError naming the first key never asked for.
  void reject_unknown() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw UsageError("config: unknown key '" + name(k) + "'");
  }

 private:
  std::string name(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }
  [[noreturn]] void bad(const std::string& k, const char* what) const {
    throw UsageError("config: '" + name(k) + "' must be " + what);
  }

  const nlohmann::json& j_;
  std::string prefix_;
  std::set<std::string> used_;
};

}  // namespace playclass
