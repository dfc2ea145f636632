#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "heatsvc/csv.hpp"
#include "heatsvc/error.hpp"

namespace heatsvc {

/// `key = value` configuration file. Blank lines and `#` comments are
/// ignored. Every error names the file and line the offending key came from.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in, std::string source) {
    Config c;
    c.source_ = std::move(source);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view v = csv::trim(line);
      if (auto hash = v.find('#'); hash != std::string_view::npos) v = csv::trim(v.substr(0, hash));
      if (v.empty()) continue;
      auto eq = v.find('=');
      if (eq == std::string_view::npos)
        throw InputError(c.source_ + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + std::string(v) + "'");
      std::string key(csv::trim(v.substr(0, eq)));
      std::string value(csv::trim(v.substr(eq + 1)));
      if (key.empty()) throw InputError(c.source_ + ":" + std::to_string(lineno) + ": empty key");
      if (c.entries_.count(key))
        throw InputError(c.source_ + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.entries_[key] = Entry{value, lineno};
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path.string());
    return parse(in, path.string());
  }

  static Config from_string(const std::string& text, std::string source = "<string>") {
    std::istringstream in(text);
    return parse(in, std::move(source));
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { entries_[key] = Entry{value, 0}; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    used_.insert(key);
    return it->second.value;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    used_.insert(key);
    const std::string& s = it->second.value;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail(it->second, "'" + key + "' is not a number: '" + s + "'");
    return v;
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    used_.insert(key);
    const std::string& s = it->second.value;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail(it->second, "'" + key + "' is not an integer: '" + s + "'");
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    used_.insert(key);
    const std::string& s = it->second.value;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail(it->second, "'" + key + "' is not a boolean: '" + s + "'");
  }

  /// Comma- or whitespace-separated list of numbers.
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    used_.insert(key);
    std::vector<double> out;
    std::string s = it->second.value;
    for (char& ch : s)
      if (ch == ',') ch = ' ';
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        fail(it->second, "'" + key + "' has a non-numeric element: '" + tok + "'");
      out.push_back(v);
    }
    return out;
  }

  /// Throws if the file contains keys nobody asked for; catches typos.
  void reject_unused() const {
    for (const auto& [key, e] : entries_)
      if (!used_.count(key)) fail(e, "unknown key '" + key + "'");
  }

  /// Canonical text (sorted keys), used for hashing a run's configuration.
  std::string canonical() const {
    std::string out;
    for (const auto& [key, e] : entries_) out += key + "=" + e.value + "\n";
    return out;
  }

  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  [[noreturn]] void fail(const Entry& e, const std::string& msg) const {
    throw InputError(source_ + ":" + std::to_string(e.line) + ": " + msg);
  }

  std::string source_ = "<config>";
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

}  // namespace heatsvc
