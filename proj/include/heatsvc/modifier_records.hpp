#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "heatsvc/csv.hpp"
#include "heatsvc/error.hpp"

namespace heatsvc {

inline constexpr std::array<const char*, 3> kSepLevels = {"low", "baseline", "high"};
inline constexpr std::array<const char*, 3> kUrbanLevels = {"rural", "semi-urban", "urban"};
inline constexpr std::array<const char*, 3> kLanguageLevels = {"German", "French", "Italian"};

/// Area-level effect modifiers. Categorical fields hold level indices into
/// the arrays above.
struct ModifierRecord {
  int area_id = 0;
  double pct_over_85 = 0.0;
  double ndvi = 0.0;
  double mean_temp = 0.0;
  double no2 = 0.0;
  int sep_class = 1;
  int urbanicity = 0;
  int language = 0;
};

namespace detail {
template <std::size_t N>
int level_index(const std::array<const char*, N>& levels, const std::string& v, const std::string& where, const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (v == levels[i]) return static_cast<int>(i);
  std::string allowed;
  for (std::size_t i = 0; i < N; ++i) allowed += (i ? ", " : "") + std::string(levels[i]);
  throw InputError(where + ": unknown " + what + " level '" + v + "' (expected one of " + allowed + ")");
}
}  // namespace detail

inline std::vector<ModifierRecord> read_modifiers(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const auto ca = t.column("area_id"), c85 = t.column("pct_over_85"), cn = t.column("ndvi"), ct = t.column("mean_temp"),
             cno2 = t.column("no2"), cs = t.column("sep_class"), cu = t.column("urbanicity"), cl = t.column("language");
  std::vector<ModifierRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ModifierRecord m;
    m.area_id = static_cast<int>(t.get_int(r, ca));
    m.pct_over_85 = t.get_double(r, c85);
    m.ndvi = t.get_double(r, cn);
    m.mean_temp = t.get_double(r, ct);
    m.no2 = t.get_double(r, cno2);
    for (double v : {m.pct_over_85, m.ndvi, m.mean_temp, m.no2})
      if (!std::isfinite(v)) throw InputError(t.where(r) + ": non-finite modifier value");
    if (m.ndvi < -1.0 || m.ndvi > 1.0) throw InputError(t.where(r) + ": ndvi must lie in [-1, 1]");
    m.sep_class = detail::level_index(kSepLevels, t.get(r, cs), t.where(r), "sep_class");
    m.urbanicity = detail::level_index(kUrbanLevels, t.get(r, cu), t.where(r), "urbanicity");
    m.language = detail::level_index(kLanguageLevels, t.get(r, cl), t.where(r), "language");
    out.push_back(m);
  }
  return out;
}

inline void write_modifiers(const std::filesystem::path& path, const std::vector<ModifierRecord>& recs) {
  csv::Writer w(path);
  w.header({"area_id", "pct_over_85", "ndvi", "mean_temp", "no2", "sep_class", "urbanicity", "language"});
  for (const auto& m : recs)
    w.row(m.area_id, m.pct_over_85, m.ndvi, m.mean_temp, m.no2, kSepLevels[static_cast<std::size_t>(m.sep_class)],
          kUrbanLevels[static_cast<std::size_t>(m.urbanicity)], kLanguageLevels[static_cast<std::size_t>(m.language)]);
  w.close();
}

}  // namespace heatsvc
