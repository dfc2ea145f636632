#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "heatsvc/csv.hpp"
#include "heatsvc/dates.hpp"
#include "heatsvc/error.hpp"
#include "heatsvc/graph.hpp"

namespace heatsvc {

// ---------------------------------------------------------------------------
// Elementary transformations

/// Linear interpolation of year-end (December 31) population counts to
/// daily values; constant beyond the first and last anchors.
inline std::vector<double> interpolate_population(std::vector<std::pair<int, double>> yearly, const std::vector<Date>& targets) {
  if (yearly.empty()) throw InputError("population interpolation needs at least one yearly count");
  std::sort(yearly.begin(), yearly.end());
  for (std::size_t i = 1; i < yearly.size(); ++i)
    if (yearly[i].first == yearly[i - 1].first) throw InputError("duplicate population count for year " + std::to_string(yearly[i].first));
  std::vector<Date> anchors;
  for (auto& [y, c] : yearly) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw InputError("population count for year " + std::to_string(y) + " must be finite and non-negative");
    anchors.push_back(Date::from_ymd(y, 12, 31));
  }
  std::vector<double> out;
  out.reserve(targets.size());
  for (Date d : targets) {
    if (d <= anchors.front()) {
      out.push_back(yearly.front().second);
      continue;
    }
    if (d >= anchors.back()) {
      out.push_back(yearly.back().second);
      continue;
    }
    const auto it = std::upper_bound(anchors.begin(), anchors.end(), d);
    const std::size_t hi = static_cast<std::size_t>(it - anchors.begin());
    const std::size_t lo = hi - 1;
    const double span = anchors[hi] - anchors[lo];
    const double frac = (d - anchors[lo]) / span;
    out.push_back(yearly[lo].second + frac * (yearly[hi].second - yearly[lo].second));
  }
  return out;
}

struct GridCell {
  long long cell_id = 0;
  double temperature = 0.0;
  double population_weight = 0.0;
};

/// Population-weighted mean temperature of the cells covering one area.
inline double area_exposure(const std::vector<GridCell>& cells) {
  if (cells.empty()) throw InputError("area exposure needs at least one grid cell");
  double sw = 0.0, swt = 0.0;
  for (const auto& c : cells) {
    if (!(c.population_weight >= 0.0)) throw InputError("grid weights must be non-negative");
    sw += c.population_weight;
    swt += c.population_weight * c.temperature;
  }
  if (!(sw > 0.0)) throw InputError("grid weights of an area are all zero");
  return swt / sw;
}

inline constexpr int kMaxLag = 3;

/// Mean of lags 0..3. `temps[k]` is the temperature on `first_date + k`;
/// the output covers `first_date + 3` onwards. A non-finite entry anywhere
/// in a window is reported with the first date it makes uncomputable.
inline std::vector<double> lag_average(const std::vector<double>& temps, Date first_date = Date{}) {
  if (temps.size() <= static_cast<std::size_t>(kMaxLag))
    throw InputError("lag averaging needs " + std::to_string(kMaxLag) + " pre-period days; first uncomputable date " +
                     (first_date + static_cast<int>(temps.size()) - 1).iso());
  std::vector<double> out(temps.size() - kMaxLag);
  for (std::size_t d = 0; d < out.size(); ++d) {
    double s = 0.0;
    for (int l = 0; l <= kMaxLag; ++l) s += temps[d + static_cast<std::size_t>(kMaxLag - l)];
    if (!std::isfinite(s))
      throw InputError("missing temperature in lag window; first uncomputable date " + (first_date + static_cast<int>(d) + kMaxLag).iso());
    out[d] = s / (kMaxLag + 1);
  }
  return out;
}

/// Six day-of-week indicators (Monday..Saturday, Sunday the reference) and a
/// holiday flag, in the column order of the gamma coefficients.
struct CalendarCovariates {
  std::array<std::uint8_t, 6> dow{};
  std::uint8_t holiday = 0;

  double value(int k) const { return k < 6 ? dow[static_cast<std::size_t>(k)] : holiday; }
};

inline constexpr std::array<const char*, 7> kCalendarNames = {"mon", "tue", "wed", "thu", "fri", "sat", "holiday"};

inline CalendarCovariates calendar_covariates(Date d, const std::set<Date>& holidays) {
  CalendarCovariates c;
  const unsigned wd = d.weekday();
  if (wd != 0) c.dow[wd - 1] = 1;
  c.holiday = holidays.count(d) ? 1 : 0;
  return c;
}

/// Gregorian Easter Sunday (anonymous algorithm).
inline Date easter_sunday(int y) {
  const int a = y % 19, b = y / 100, c = y % 100, d = b / 4, e = b % 4;
  const int f = (b + 8) / 25, g = (b - f + 1) / 3, h = (19 * a + b - d - g + 15) % 30;
  const int i = c / 4, k = c % 4, l = (32 + 2 * e + 2 * i - h - k) % 7;
  const int m = (a + 11 * h + 22 * l) / 451;
  const int month = (h + l - 7 * m + 114) / 31, day = (h + l - 7 * m + 114) % 31 + 1;
  return Date::from_ymd(y, static_cast<unsigned>(month), static_cast<unsigned>(day));
}

/// Nationwide public holidays falling in June-August: the national day
/// (August 1) and Ascension / Whit Monday when they fall in June.
inline std::set<Date> default_holidays(int first_year, int last_year) {
  std::set<Date> out;
  for (int y = first_year; y <= last_year; ++y) {
    out.insert(Date::from_ymd(y, 8, 1));
    const Date easter = easter_sunday(y);
    for (int offset : {39, 50}) {
      const Date d = easter + offset;
      if (in_summer(d)) out.insert(d);
    }
  }
  return out;
}

inline std::set<Date> read_holidays(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c = t.column("date");
  std::set<Date> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    try {
      out.insert(parse_date(t.get(r, c)));
    } catch (const InputError& e) {
      throw InputError(t.where(r) + ": " + e.what());
    }
  }
  return out;
}

inline void write_holidays(const std::filesystem::path& path, const std::set<Date>& days) {
  csv::Writer w(path);
  w.header({"date"});
  for (Date d : days) w.row(d.iso());
  w.close();
}

// ---------------------------------------------------------------------------
// Assembled analysis table

/// One row per (area, summer day) with positive population; columnar.
struct AnalysisTable {
  int n_areas = 0;
  std::vector<int> years;  // study years, ascending
  std::vector<int> area;
  std::vector<Date> date;
  std::vector<int> deaths;
  std::vector<double> population;
  std::vector<double> exposure;
  std::vector<CalendarCovariates> calendar;
  std::vector<int> year_index;
  std::vector<int> day_index;

  std::size_t size() const { return area.size(); }
  int n_years() const { return static_cast<int>(years.size()); }

  void push(int m, Date d, int y, double pop, double x, const CalendarCovariates& cal, int year_idx) {
    area.push_back(m);
    date.push_back(d);
    deaths.push_back(y);
    population.push_back(pop);
    exposure.push_back(x);
    calendar.push_back(cal);
    year_index.push_back(year_idx);
    day_index.push_back(summer_day_index(d));
  }
};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t zero_population_rows = 0;
  std::size_t missing_death_rows = 0;
  std::vector<std::pair<int, std::string>> zero_population;  // (area, date)
};

/// Raw study inputs in the data-ingest CSV schema.
struct RawDataset {
  int n_areas = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<int> canton_of;
  std::map<int, std::vector<std::pair<int, double>>> population;  // area -> (year, count)
  std::map<std::pair<int, Date>, int> deaths;                     // (area, date) -> count
  std::map<long long, std::map<Date, double>> temperature;        // cell -> date -> temp
  std::map<int, std::vector<std::pair<long long, double>>> weights;  // area -> (cell, weight)
  std::set<Date> holidays;
};

inline RawDataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw InputError("data directory not found: " + dir.string());
  RawDataset ds;

  const csv::Table cant = csv::read(dir / "cantons.csv");
  {
    const auto ca = cant.column("area_id"), cc = cant.column("canton_id");
    std::map<long long, long long> m;
    for (std::size_t r = 0; r < cant.rows.size(); ++r) {
      const long long a = cant.get_int(r, ca);
      if (!m.emplace(a, cant.get_int(r, cc)).second) throw InputError(cant.where(r) + ": duplicate area id " + std::to_string(a));
    }
    ds.n_areas = static_cast<int>(m.size());
    ds.canton_of.assign(static_cast<std::size_t>(ds.n_areas), -1);
    for (auto [a, c] : m) {
      if (a < 0 || a >= ds.n_areas) throw InputError(cant.source + ": area ids must be dense 0..n-1 (found " + std::to_string(a) + ")");
      ds.canton_of[static_cast<std::size_t>(a)] = static_cast<int>(c);
    }
  }
  auto check_area = [&](const csv::Table& t, std::size_t r, long long a) {
    if (a < 0 || a >= ds.n_areas) throw InputError(t.where(r) + ": unknown area id " + std::to_string(a));
    return static_cast<int>(a);
  };

  const csv::Table graph = csv::read(dir / "graph.csv");
  {
    const auto ga = graph.column("area_a"), gb = graph.column("area_b");
    for (std::size_t r = 0; r < graph.rows.size(); ++r)
      ds.edges.emplace_back(check_area(graph, r, graph.get_int(r, ga)), check_area(graph, r, graph.get_int(r, gb)));
  }

  const csv::Table pop = csv::read(dir / "population.csv");
  {
    const auto pa = pop.column("area_id"), py = pop.column("year"), pc = pop.column("count");
    for (std::size_t r = 0; r < pop.rows.size(); ++r) {
      const double c = pop.get_double(r, pc);
      if (!(c >= 0.0)) throw InputError(pop.where(r) + ": population must be non-negative");
      ds.population[check_area(pop, r, pop.get_int(r, pa))].emplace_back(static_cast<int>(pop.get_int(r, py)), c);
    }
  }

  const csv::Table deaths = csv::read(dir / "deaths.csv");
  {
    const auto da = deaths.column("area_id"), dd = deaths.column("date"), dy = deaths.column("deaths");
    for (std::size_t r = 0; r < deaths.rows.size(); ++r) {
      const int a = check_area(deaths, r, deaths.get_int(r, da));
      Date d;
      try {
        d = parse_date(deaths.get(r, dd));
      } catch (const InputError& e) {
        throw InputError(deaths.where(r) + ": " + e.what());
      }
      if (!in_summer(d)) throw InputError(deaths.where(r) + ": date " + d.iso() + " outside June 1 - August 31");
      const long long y = deaths.get_int(r, dy);
      if (y < 0) throw InputError(deaths.where(r) + ": negative death count");
      if (!ds.deaths.emplace(std::make_pair(a, d), static_cast<int>(y)).second)
        throw InputError(deaths.where(r) + ": duplicate record for area " + std::to_string(a) + " on " + d.iso());
    }
  }

  const csv::Table temp = csv::read(dir / "temperature_grid.csv");
  {
    const auto tc = temp.column("cell_id"), td = temp.column("date"), tt = temp.column("temp");
    for (std::size_t r = 0; r < temp.rows.size(); ++r) {
      Date d;
      try {
        d = parse_date(temp.get(r, td));
      } catch (const InputError& e) {
        throw InputError(temp.where(r) + ": " + e.what());
      }
      const double v = temp.get_double(r, tt);
      if (!std::isfinite(v)) throw InputError(temp.where(r) + ": non-finite temperature");
      if (!ds.temperature[temp.get_int(r, tc)].emplace(d, v).second)
        throw InputError(temp.where(r) + ": duplicate temperature for cell on " + d.iso());
    }
  }

  const csv::Table wts = csv::read(dir / "grid_weights.csv");
  {
    const auto wa = wts.column("area_id"), wc = wts.column("cell_id"), ww = wts.column("weight");
    for (std::size_t r = 0; r < wts.rows.size(); ++r) {
      const double w = wts.get_double(r, ww);
      if (!(w >= 0.0)) throw InputError(wts.where(r) + ": grid weight must be non-negative");
      ds.weights[check_area(wts, r, wts.get_int(r, wa))].emplace_back(wts.get_int(r, wc), w);
    }
  }

  if (fs::exists(dir / "holidays.csv")) {
    ds.holidays = read_holidays(dir / "holidays.csv");
  } else {
    int lo = 9999, hi = 0;
    for (const auto& [key, y] : ds.deaths) {
      lo = std::min(lo, key.second.year());
      hi = std::max(hi, key.second.year());
    }
    if (hi >= lo) ds.holidays = default_holidays(lo, hi);
  }
  return ds;
}

/// Builds the model-ready table: exposures are lag-0..3 means of the
/// population-weighted grid temperature, populations are interpolated from
/// year-end counts, and (area, day) rows with zero population are dropped.
/// Study years are the years present in the deaths file; a missing deaths
/// row for an (area, summer day) of a study year counts as zero deaths.
inline AnalysisTable assemble_table(const RawDataset& ds, IngestReport* report = nullptr) {
  IngestReport rep;
  AnalysisTable t;
  t.n_areas = ds.n_areas;
  std::set<int> years;
  for (const auto& [key, y] : ds.deaths) years.insert(key.second.year());
  if (years.empty()) throw InputError("deaths.csv contains no records");
  t.years.assign(years.begin(), years.end());

  std::vector<Date> days;
  for (int y : t.years)
    for (int k = 0; k < kSummerDays; ++k) days.push_back(summer_start(y) + k);

  for (int m = 0; m < ds.n_areas; ++m) {
    const auto pit = ds.population.find(m);
    if (pit == ds.population.end()) throw InputError("population.csv has no counts for area " + std::to_string(m));
    const std::vector<double> pop = interpolate_population(pit->second, days);
    const auto wit = ds.weights.find(m);
    if (wit == ds.weights.end()) throw InputError("grid_weights.csv has no cells for area " + std::to_string(m));

    for (std::size_t yi = 0; yi < t.years.size(); ++yi) {
      const Date first = summer_start(t.years[yi]) - kMaxLag;
      std::vector<double> temps;
      for (int k = 0; k < kSummerDays + kMaxLag; ++k) {
        const Date d = first + k;
        std::vector<GridCell> cells;
        for (auto [cell, w] : wit->second) {
          const auto cit = ds.temperature.find(cell);
          const std::map<Date, double>* series = cit == ds.temperature.end() ? nullptr : &cit->second;
          const auto dit = series ? series->find(d) : std::map<Date, double>::const_iterator{};
          if (!series || dit == series->end()) {
            if (k < kMaxLag)
              throw InputError("lag averaging needs " + std::to_string(kMaxLag) + " pre-period days; cell " + std::to_string(cell) +
                               " has no temperature on " + d.iso() + " (first uncomputable date " + summer_start(t.years[yi]).iso() + ")");
            throw InputError("temperature_grid.csv: cell " + std::to_string(cell) + " has no temperature on " + d.iso());
          }
          cells.push_back({cell, dit->second, w});
        }
        try {
          temps.push_back(area_exposure(cells));
        } catch (const InputError& e) {
          throw InputError("area " + std::to_string(m) + ": " + e.what());
        }
      }
      const std::vector<double> expo = lag_average(temps, first);
      for (int k = 0; k < kSummerDays; ++k) {
        const Date d = summer_start(t.years[yi]) + k;
        const double p = pop[yi * kSummerDays + static_cast<std::size_t>(k)];
        const auto dit = ds.deaths.find({m, d});
        if (!(p > 0.0)) {
          ++rep.zero_population_rows;
          rep.zero_population.emplace_back(m, d.iso());
          continue;
        }
        int y = 0;
        if (dit == ds.deaths.end())
          ++rep.missing_death_rows;
        else
          y = dit->second;
        t.push(m, d, y, p, expo[static_cast<std::size_t>(k)], calendar_covariates(d, ds.holidays), static_cast<int>(yi));
      }
    }
  }
  rep.rows = t.size();
  if (report) *report = rep;
  return t;
}

/// Writes a dataset in the ingest CSV schema (inverse of read_dataset).
inline void write_dataset(const std::filesystem::path& dir, const RawDataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    csv::Writer w(dir / "cantons.csv");
    w.header({"area_id", "canton_id"});
    for (int m = 0; m < ds.n_areas; ++m) w.row(m, ds.canton_of[static_cast<std::size_t>(m)]);
    w.close();
  }
  {
    csv::Writer w(dir / "graph.csv");
    w.header({"area_a", "area_b"});
    for (auto [a, b] : ds.edges) w.row(a, b);
    w.close();
  }
  {
    csv::Writer w(dir / "population.csv");
    w.header({"area_id", "year", "count"});
    for (const auto& [m, counts] : ds.population)
      for (auto [y, c] : counts) w.row(m, y, c);
    w.close();
  }
  {
    csv::Writer w(dir / "deaths.csv");
    w.header({"area_id", "date", "deaths"});
    for (const auto& [key, y] : ds.deaths) w.row(key.first, key.second.iso(), y);
    w.close();
  }
  {
    csv::Writer w(dir / "temperature_grid.csv");
    w.header({"cell_id", "date", "temp"});
    for (const auto& [cell, series] : ds.temperature)
      for (const auto& [d, v] : series) w.row(cell, d.iso(), v);
    w.close();
  }
  {
    csv::Writer w(dir / "grid_weights.csv");
    w.header({"area_id", "cell_id", "weight"});
    for (const auto& [m, cells] : ds.weights)
      for (auto [cell, wt] : cells) w.row(m, cell, wt);
    w.close();
  }
  write_holidays(dir / "holidays.csv", ds.holidays);
}

inline AreaGraph graph_of(const RawDataset& ds) { return build_graph(ds.n_areas, ds.edges, ds.canton_of); }

inline void write_analysis_table(const std::filesystem::path& path, const AnalysisTable& t) {
  csv::Writer w(path);
  w.header({"area_id", "date", "deaths", "population", "exposure", "mon", "tue", "wed", "thu", "fri", "sat", "holiday"});
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& c = t.calendar[i];
    w.row(t.area[i], t.date[i].iso(), t.deaths[i], t.population[i], t.exposure[i], int(c.dow[0]), int(c.dow[1]), int(c.dow[2]),
          int(c.dow[3]), int(c.dow[4]), int(c.dow[5]), int(c.holiday));
  }
  w.close();
}

inline AnalysisTable read_analysis_table(const std::filesystem::path& path) {
  const csv::Table tab = csv::read(path);
  const auto ca = tab.column("area_id"), cd = tab.column("date"), cy = tab.column("deaths"), cp = tab.column("population"),
             cx = tab.column("exposure"), ch = tab.column("holiday");
  std::array<std::size_t, 6> cdow{};
  for (int k = 0; k < 6; ++k) cdow[static_cast<std::size_t>(k)] = tab.column(kCalendarNames[static_cast<std::size_t>(k)]);
  AnalysisTable t;
  std::set<int> years;
  std::vector<Date> dates(tab.rows.size());
  for (std::size_t r = 0; r < tab.rows.size(); ++r) {
    dates[r] = parse_date(tab.get(r, cd));
    years.insert(dates[r].year());
  }
  t.years.assign(years.begin(), years.end());
  int max_area = -1;
  for (std::size_t r = 0; r < tab.rows.size(); ++r) {
    CalendarCovariates c;
    for (std::size_t k = 0; k < 6; ++k) c.dow[k] = static_cast<std::uint8_t>(tab.get_int(r, cdow[k]));
    c.holiday = static_cast<std::uint8_t>(tab.get_int(r, ch));
    const int a = static_cast<int>(tab.get_int(r, ca));
    max_area = std::max(max_area, a);
    const int yi = static_cast<int>(std::lower_bound(t.years.begin(), t.years.end(), dates[r].year()) - t.years.begin());
    t.push(a, dates[r], static_cast<int>(tab.get_int(r, cy)), tab.get_double(r, cp), tab.get_double(r, cx), c, yi);
  }
  t.n_areas = max_area + 1;
  return t;
}

}  // namespace heatsvc
