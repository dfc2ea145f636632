#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "heatsvc/error.hpp"

namespace heatsvc {

/// Empirical quantile by linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending; p in [0, 1].
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw InputError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, p);
}

/// Inverse of `quantile_sorted`: the percentile (0..100) at which `x` sits in
/// the piecewise-linear empirical quantile function. Clamped to [0, 100].
inline double percentile_of(std::span<const double> sorted, double x) {
  const std::size_t n = sorted.size();
  if (n == 0) throw InputError("percentile in an empty sample");
  if (n == 1 || x <= sorted.front()) return 0.0;
  if (x >= sorted.back()) return 100.0;
  // last index with sorted[i] <= x
  auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
  std::size_t i = static_cast<std::size_t>(it - sorted.begin()) - 1;
  double frac = 0.0;
  if (sorted[i + 1] > sorted[i]) frac = (x - sorted[i]) / (sorted[i + 1] - sorted[i]);
  return 100.0 * (static_cast<double>(i) + frac) / static_cast<double>(n - 1);
}

struct KnotSet {
  std::array<double, 3> interior{};
  std::array<double, 2> boundary{};
};

/// Interior knots at the 10th, 75th and 90th percentiles, boundary knots at
/// the sample extremes.
inline KnotSet knots_from_quantiles(std::vector<double> exposures) {
  for (double x : exposures)
    if (!std::isfinite(x)) throw InputError("non-finite exposure value");
  std::sort(exposures.begin(), exposures.end());
  std::size_t distinct = exposures.empty() ? 0 : 1;
  for (std::size_t i = 1; i < exposures.size(); ++i)
    if (exposures[i] != exposures[i - 1]) ++distinct;
  if (distinct < 10)
    throw InputError("knot placement needs at least 10 distinct exposure values, got " + std::to_string(distinct));
  KnotSet k;
  k.interior = {quantile_sorted(exposures, 0.10), quantile_sorted(exposures, 0.75), quantile_sorted(exposures, 0.90)};
  k.boundary = {exposures.front(), exposures.back()};
  const double seq[5] = {k.boundary[0], k.interior[0], k.interior[1], k.interior[2], k.boundary[1]};
  for (int i = 0; i < 4; ++i)
    if (!(seq[i] < seq[i + 1])) throw InputError("knots are not strictly increasing; exposure distribution too concentrated");
  return k;
}

/// Four-column natural cubic spline basis without intercept.
///
/// Column j is the natural cubic spline through the knot sequence
/// (min, k1, k2, k3, max) that equals 1 at knot j+1 and 0 at every other
/// knot, so every column vanishes at the lower boundary and is linear beyond
/// both boundary knots. Internally the basis is built from the truncated
/// power representation on a rescaled axis and mapped to the cardinal form.
class SplineBasis {
 public:
  static constexpr int kColumns = 4;
  using Row = Eigen::Matrix<double, 1, kColumns>;

  SplineBasis() = default;

  SplineBasis(const KnotSet& knots, double reference_temp) : knots_(knots), reference_(reference_temp) {
    if (!std::isfinite(reference_temp)) throw InputError("reference temperature must be finite");
    t_ = {knots.boundary[0], knots.interior[0], knots.interior[1], knots.interior[2], knots.boundary[1]};
    for (int i = 0; i < 4; ++i)
      if (!(t_[i] < t_[i + 1])) throw InputError("spline knots must be strictly increasing");
    scale_ = t_[4] - t_[0];
    for (int i = 0; i < 5; ++i) s_[i] = (t_[i] - t_[0]) / scale_;

    Eigen::Matrix<double, 5, 5> values;
    for (int i = 0; i < 5; ++i) values.row(i) = power_row(s_[i]);
    // cardinal[c][j]: coefficients of column j in the truncated power basis
    Eigen::Matrix<double, 5, 5> inv = values.fullPivLu().inverse();
    cardinal_ = inv.rightCols<4>();
    center_ = raw(reference_temp);
  }

  /// Uncentered (centered = false) or reference-centered basis row.
  Row evaluate(double x, bool centered) const {
    if (!std::isfinite(x)) throw InputError("cannot evaluate spline basis at a non-finite exposure");
    Row r = raw(x);
    if (centered) r -= center_;
    return r;
  }

  const Row& center_row() const { return center_; }
  double reference() const { return reference_; }
  const KnotSet& knots() const { return knots_; }
  double lower() const { return t_[0]; }
  double upper() const { return t_[4]; }

 private:
  Eigen::Matrix<double, 1, 5> power_row(double s) const {
    auto cube_plus = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
    auto d = [&](int k) { return (cube_plus(s - s_[k]) - cube_plus(s - s_[4])) / (s_[4] - s_[k]); };
    Eigen::Matrix<double, 1, 5> row;
    row << 1.0, s, d(0) - d(3), d(1) - d(3), d(2) - d(3);
    return row;
  }

  Row raw(double x) const { return power_row((x - t_[0]) / scale_) * cardinal_; }

  KnotSet knots_{};
  double reference_ = 12.0;
  std::array<double, 5> t_{};
  std::array<double, 5> s_{};
  double scale_ = 1.0;
  Eigen::Matrix<double, 5, 4> cardinal_ = Eigen::Matrix<double, 5, 4>::Zero();
  Row center_ = Row::Zero();
};

inline constexpr int kGridPoints = 200;

/// 200 equally spaced exposures from the lower to the upper boundary knot.
inline std::vector<double> evaluation_grid(double lower, double upper, int points = kGridPoints) {
  if (!(lower < upper)) throw InputError("evaluation grid needs lower < upper boundary");
  std::vector<double> g(static_cast<std::size_t>(points));
  const double step = (upper - lower) / (points - 1);
  for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = lower + step * i;
  g.front() = lower;
  g.back() = upper;
  return g;
}

inline std::vector<double> evaluation_grid(const SplineBasis& basis) { return evaluation_grid(basis.lower(), basis.upper()); }

}  // namespace heatsvc
