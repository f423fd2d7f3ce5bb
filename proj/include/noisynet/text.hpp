#pragma once

// Locale-independent number formatting/parsing and key=value text.

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "noisynet/errors.hpp"

namespace noisynet::text {

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class E = DataError>
double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  const std::string t = trim(s);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw E(what + ": '" + t + "' is not a number");
  return v;
}

template <class E = DataError>
std::uint64_t parse_u64(std::string_view s, const std::string& what) {
  std::uint64_t v = 0;
  const std::string t = trim(s);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw E(what + ": '" + t + "' is not a non-negative integer");
  return v;
}

template <class E = DataError>
bool parse_bool(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw E(what + ": '" + t + "' is not a boolean");
}

inline std::string format_bool(bool b) { return b ? "true" : "false"; }

/// Ordered key=value lines; '#' starts a comment line.
struct KeyValues {
  std::vector<std::pair<std::string, std::string>> items;

  void set(const std::string& key, std::string value) {
    for (auto& [k, v] : items)
      if (k == key) {
        v = std::move(value);
        return;
      }
    items.emplace_back(key, std::move(value));
  }
  void set(const std::string& key, double v) { set(key, format_double(v)); }
  void set(const std::string& key, const char* v) { set(key, std::string(v)); }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : items)
      if (k == key) return true;
    return false;
  }

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : items)
      if (k == key) return v;
    throw DataError("missing key '" + key + "'");
  }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : items) out += k + "=" + v + "\n";
    return out;
  }

  template <class E = DataError>
  static KeyValues parse(const std::string& body, const std::string& source) {
    KeyValues kv;
    std::istringstream in(body);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos || eq == 0)
        throw E(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
      const std::string key = trim(t.substr(0, eq));
      if (kv.has(key)) throw E(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      kv.items.emplace_back(key, trim(t.substr(eq + 1)));
    }
    return kv;
  }
};

}  // namespace noisynet::text
