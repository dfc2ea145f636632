#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "heatsvc/error.hpp"

namespace heatsvc {

/// Calendar day, stored as days since 1970-01-01.
struct Date {
  int days = 0;

  static Date from_ymd(int y, unsigned m, unsigned d) {
    using namespace std::chrono;
    year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw InputError("invalid calendar date " + std::to_string(y) + "-" + std::to_string(m) + "-" + std::to_string(d));
    return Date{static_cast<int>(sys_days{ymd}.time_since_epoch().count())};
  }

  std::chrono::year_month_day ymd() const {
    return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days}}};
  }

  int year() const { return static_cast<int>(ymd().year()); }
  unsigned month() const { return static_cast<unsigned>(ymd().month()); }
  unsigned day() const { return static_cast<unsigned>(ymd().day()); }

  /// 0 = Sunday ... 6 = Saturday.
  unsigned weekday() const {
    return std::chrono::weekday{std::chrono::sys_days{std::chrono::days{days}}}.c_encoding();
  }

  std::string iso() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year(), month(), day());
    return buf;
  }

  Date operator+(int n) const { return Date{days + n}; }
  Date operator-(int n) const { return Date{days - n}; }
  int operator-(Date o) const { return days - o.days; }
  auto operator<=>(const Date&) const = default;
};

/// Parses YYYY-MM-DD.
inline Date parse_date(std::string_view s) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-')
    throw InputError("not an ISO-8601 date: '" + std::string(s) + "'");
  auto digits = [&](std::size_t from, std::size_t len) {
    int v = 0;
    for (std::size_t i = from; i < from + len; ++i) {
      if (s[i] < '0' || s[i] > '9') throw InputError("not an ISO-8601 date: '" + std::string(s) + "'");
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  y = digits(0, 4);
  m = static_cast<unsigned>(digits(5, 2));
  d = static_cast<unsigned>(digits(8, 2));
  return Date::from_ymd(y, m, d);
}

inline constexpr int kSummerDays = 92;

inline Date summer_start(int year) { return Date::from_ymd(year, 6, 1); }

inline bool in_summer(Date d) {
  return d.month() >= 6 && d.month() <= 8;
}

/// 0-based index of a summer date within June 1 .. August 31.
inline int summer_day_index(Date d) { return d - summer_start(d.year()); }

}  // namespace heatsvc
