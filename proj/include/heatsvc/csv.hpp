#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "heatsvc/error.hpp"

namespace heatsvc::csv {

/// A parsed comma-separated table. Fields are kept as strings; typed access
/// goes through the `get_*` helpers, which report file and line on failure.
struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_of_row;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InputError(source + ": missing column '" + std::string(name) + "'");
  }

  std::string where(std::size_t row) const {
    return source + ":" + std::to_string(line_of_row[row]);
  }

  double get_double(std::size_t row, std::size_t col) const {
    const std::string& s = rows[row][col];
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw InputError(where(row) + ": not a number: '" + s + "'");
    return v;
  }

  long long get_int(std::size_t row, std::size_t col) const {
    const std::string& s = rows[row][col];
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw InputError(where(row) + ": not an integer: '" + s + "'");
    return v;
  }

  const std::string& get(std::size_t row, std::size_t col) const { return rows[row][col]; }
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(trim(line.substr(start)));
      break;
    }
    out.emplace_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

inline Table parse(std::istream& in, std::string source) {
  Table t;
  t.source = std::move(source);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    auto fields = split_line(view);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      throw InputError(t.source + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_of_row.push_back(lineno);
  }
  if (!have_header) throw InputError(t.source + ": empty file (no header)");
  return t;
}

inline Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse(in, path.string());
}

/// Shortest round-trip representation, so written tables reload bit-exactly.
inline std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path) {
    if (!out_) throw InputError("cannot write " + path.string());
  }

  Writer& header(std::initializer_list<std::string_view> cols) {
    bool first = true;
    for (auto c : cols) {
      if (!first) out_ << ',';
      out_ << c;
      first = false;
    }
    out_ << '\n';
    return *this;
  }

  Writer& header(const std::vector<std::string>& cols) {
    fields(cols);
    return *this;
  }

  void fields(const std::vector<std::string>& vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (i) out_ << ',';
      out_ << vals[i];
    }
    out_ << '\n';
  }

  template <class... Ts>
  void row(const Ts&... vals) {
    bool first = true;
    ((emit(vals, first)), ...);
    out_ << '\n';
  }

  void raw_line(std::string_view line) { out_ << line << '\n'; }

  void close() {
    out_.close();
    if (!out_) throw InputError("failed writing " + path_.string());
  }

 private:
  template <class T>
  void emit(const T& v, bool& first) {
    if (!first) out_ << ',';
    first = false;
    if constexpr (std::is_floating_point_v<T>) {
      out_ << fmt(static_cast<double>(v));
    } else {
      out_ << v;
    }
  }

  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace heatsvc::csv
