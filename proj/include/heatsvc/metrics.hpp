#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "heatsvc/error.hpp"
#include "heatsvc/graph.hpp"
#include "heatsvc/ingest.hpp"
#include "heatsvc/latent_model.hpp"
#include "heatsvc/spline.hpp"

namespace heatsvc {

inline constexpr double kPerThousand = 1000.0;
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Centered spline basis evaluated once on the temperature grid.
class CurveEvaluator {
 public:
  using GridBasis = Eigen::Matrix<double, Eigen::Dynamic, kSplineCols>;

  CurveEvaluator(const SplineBasis& basis, std::vector<double> grid) : grid_(std::move(grid)) {
    if (grid_.size() < 2) throw InputError("temperature grid needs at least two points");
    for (std::size_t i = 1; i < grid_.size(); ++i)
      if (!(grid_[i] > grid_[i - 1])) throw InputError("temperature grid must be strictly increasing");
    if (grid_.front() < basis.lower() - 1e-9 || grid_.back() > basis.upper() + 1e-9)
      throw InputError("temperature grid extends beyond the spline domain");
    g_.resize(static_cast<Eigen::Index>(grid_.size()), kSplineCols);
    for (std::size_t i = 0; i < grid_.size(); ++i) g_.row(static_cast<Eigen::Index>(i)) = basis.evaluate(grid_[i], true);
  }

  explicit CurveEvaluator(const SplineBasis& basis) : CurveEvaluator(basis, evaluation_grid(basis)) {}

  /// logRR* on the grid for one coefficient vector (zero at the reference temperature).
  Eigen::VectorXd curve(const Eigen::Ref<const Eigen::VectorXd>& beta) const { return g_ * beta; }

  /// One column per draw.
  Eigen::MatrixXd curves(const Eigen::Ref<const Eigen::MatrixXd>& beta_draws) const { return g_ * beta_draws; }

  const std::vector<double>& grid() const { return grid_; }
  Eigen::Index size() const { return g_.rows(); }
  const GridBasis& basis_matrix() const { return g_; }

 private:
  std::vector<double> grid_;
  GridBasis g_;
};

/// Grid point nearest to x; a tie goes to the lower index.
inline int nearest_grid_index(std::span<const double> grid, double x) {
  const double tol = 1e-9 * std::max(1.0, std::abs(grid.back() - grid.front()));
  if (!(x >= grid.front() - tol && x <= grid.back() + tol))
    throw InputError("exposure " + std::to_string(x) + " lies outside the temperature grid");
  const auto it = std::lower_bound(grid.begin(), grid.end(), x);
  if (it == grid.begin()) return 0;
  if (it == grid.end()) return static_cast<int>(grid.size()) - 1;
  const auto k = static_cast<int>(it - grid.begin());
  return (grid[static_cast<std::size_t>(k)] - x < x - grid[static_cast<std::size_t>(k) - 1]) ? k : k - 1;
}

struct DeathHistogram {
  Eigen::VectorXd counts;  // Y_m(x) on the grid
  double total = 0.0;      // Y_m
  double population = 0.0; // P_m, mean daily population
};

/// Bins per-record weights (observed deaths, or expected counts) to the
/// nearest grid temperature, one histogram per area.
inline std::vector<DeathHistogram> bin_values(const AnalysisTable& t, std::span<const double> grid, std::span<const double> values) {
  if (values.size() != t.size()) throw InputError("bin_values: one value per analysis row required");
  std::vector<DeathHistogram> h(static_cast<std::size_t>(t.n_areas));
  std::vector<std::size_t> rows(h.size(), 0);
  for (auto& d : h) d.counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t r = 0; r < t.size(); ++r) {
    auto& d = h[static_cast<std::size_t>(t.area[r])];
    d.counts[nearest_grid_index(grid, t.exposure[r])] += values[r];
    d.total += values[r];
    d.population += t.population[r];
    ++rows[static_cast<std::size_t>(t.area[r])];
  }
  for (std::size_t m = 0; m < h.size(); ++m) {
    if (rows[m] == 0) throw InputError("area " + std::to_string(m) + " has no rows in the analysis table");
    h[m].population /= static_cast<double>(rows[m]);
  }
  return h;
}

inline std::vector<DeathHistogram> bin_deaths(const AnalysisTable& t, std::span<const double> grid) {
  std::vector<double> y(t.deaths.begin(), t.deaths.end());
  return bin_values(t, grid, y);
}

/// Sorted summer exposures of a set of areas, with its 25th-90th percentile window.
struct ExposureWindow {
  std::vector<double> sorted;
  double lower = 0.0;
  double upper = 0.0;

  static ExposureWindow of(std::vector<double> xs) {
    if (xs.empty()) throw InputError("MMT search needs at least one exposure value");
    ExposureWindow w;
    std::sort(xs.begin(), xs.end());
    w.sorted = std::move(xs);
    w.lower = quantile_sorted(w.sorted, 0.25);
    w.upper = quantile_sorted(w.sorted, 0.90);
    return w;
  }
};

inline std::vector<ExposureWindow> area_windows(const AnalysisTable& t) {
  std::vector<std::vector<double>> xs(static_cast<std::size_t>(t.n_areas));
  for (std::size_t r = 0; r < t.size(); ++r) xs[static_cast<std::size_t>(t.area[r])].push_back(t.exposure[r]);
  std::vector<ExposureWindow> out;
  out.reserve(xs.size());
  for (auto& v : xs) out.push_back(ExposureWindow::of(std::move(v)));
  return out;
}

struct Mmt {
  int index = 0;
  double temperature = 0.0;
  double percentile = 0.0;
  bool fallback = false;
};

/// Minimum of the curve over grid points inside the window; ties go to the
/// lowest temperature. Without any grid point in the window the full grid
/// is searched and `fallback` is set.
inline Mmt find_mmt(const Eigen::Ref<const Eigen::VectorXd>& curve, std::span<const double> grid, const ExposureWindow& w) {
  Mmt m;
  int best = -1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < w.lower || grid[i] > w.upper) continue;
    if (best < 0 || curve[static_cast<Eigen::Index>(i)] < curve[best]) best = static_cast<int>(i);
  }
  if (best < 0) {
    m.fallback = true;
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (best < 0 || curve[static_cast<Eigen::Index>(i)] < curve[best]) best = static_cast<int>(i);
  }
  m.index = best;
  m.temperature = grid[static_cast<std::size_t>(best)];
  m.percentile = percentile_of(w.sorted, m.temperature);
  return m;
}

inline Eigen::VectorXd rescale_to_mmt(const Eigen::Ref<const Eigen::VectorXd>& curve, int mmt_index) {
  return curve.array() - curve[mmt_index];
}

/// (RR - 1) / RR for RR = exp(logrr).
inline double attributable_fraction(double logrr) { return -std::expm1(-logrr); }

struct Burden {
  double ech = 0.0;
  double erh = 0.0;  // per 1,000 population
  double afh = 0.0;  // NaN when the area has no deaths
};

/// Heat burden above the MMT for one MMT-rescaled curve.
inline Burden heat_burden(const Eigen::Ref<const Eigen::VectorXd>& logrr, int mmt_index, const DeathHistogram& h) {
  if (!(h.population > 0.0)) throw InputError("heat burden needs a positive reference population");
  Burden b;
  for (Eigen::Index k = mmt_index + 1; k < logrr.size(); ++k)
    if (h.counts[k] != 0.0) b.ech += attributable_fraction(logrr[k]) * h.counts[k];
  b.erh = b.ech / h.population * kPerThousand;
  b.afh = h.total > 0.0 ? b.ech / h.total : kNaN;
  return b;
}

/// Fraction of draws strictly above the threshold. NaN draws are ignored.
inline double exceedance(std::span<const double> draws, double threshold) {
  std::size_t valid = 0, above = 0;
  for (double v : draws) {
    if (std::isnan(v)) continue;
    ++valid;
    if (v > threshold) ++above;
  }
  if (valid < 100) throw InputError("exceedance probabilities need at least 100 draws, got " + std::to_string(valid));
  return static_cast<double>(above) / static_cast<double>(valid);
}

struct Summary {
  double median = kNaN;
  double lower = kNaN;
  double upper = kNaN;
};

/// Posterior median and 95% interval, skipping NaN.
inline Summary summarize(std::span<const double> v) {
  std::vector<double> s;
  s.reserve(v.size());
  for (double x : v)
    if (!std::isnan(x)) s.push_back(x);
  Summary out;
  if (s.empty()) return out;
  std::sort(s.begin(), s.end());
  out.median = quantile_sorted(s, 0.5);
  out.lower = quantile_sorted(s, 0.025);
  out.upper = quantile_sorted(s, 0.975);
  return out;
}

/// Per grid point summaries of a (grid x draws) matrix.
struct CurveSummary {
  Eigen::VectorXd median, lower, upper;
};

inline CurveSummary summarize_curves(const Eigen::MatrixXd& c) {
  CurveSummary s;
  s.median.resize(c.rows());
  s.lower.resize(c.rows());
  s.upper.resize(c.rows());
  std::vector<double> row(static_cast<std::size_t>(c.cols()));
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    for (Eigen::Index k = 0; k < c.cols(); ++k) row[static_cast<std::size_t>(k)] = c(i, k);
    const Summary q = summarize(row);
    s.median[i] = q.median;
    s.lower[i] = q.lower;
    s.upper[i] = q.upper;
  }
  return s;
}

/// beta + beta'_m for every draw (kSplineCols x draws).
inline Eigen::MatrixXd area_coefficients(const Eigen::MatrixXd& latent, const LatentLayout& layout, int area) {
  Eigen::MatrixXd b(kSplineCols, latent.cols());
  for (int j = 0; j < kSplineCols; ++j) b.row(j) = latent.row(LatentLayout::beta(j)) + latent.row(layout.field(j) + area);
  return b;
}

inline Eigen::MatrixXd fixed_coefficients(const Eigen::MatrixXd& latent) {
  return latent.middleRows(LatentLayout::beta(0), kSplineCols);
}

// ---------------------------------------------------------------------------
// Per-area metrics over all draws

struct AreaMetrics {
  CurveSummary curve;        // MMT-rescaled logRR, per-draw MMT
  std::vector<double> mmt;   // per draw
  std::vector<double> mmp;
  std::vector<double> ech, erh, afh;
  Summary mmt_summary, mmp_summary, ech_summary, erh_summary, afh_summary;
  int fallbacks = 0;
};

/// Curves, MMT and burden of one area (or canton) from its coefficient draws.
inline AreaMetrics unit_metrics(const CurveEvaluator& ev, const Eigen::MatrixXd& coef_draws, const ExposureWindow& window,
                                const DeathHistogram* hist) {
  AreaMetrics a;
  const Eigen::Index d = coef_draws.cols();
  Eigen::MatrixXd c = ev.curves(coef_draws);
  a.mmt.resize(static_cast<std::size_t>(d));
  a.mmp.resize(static_cast<std::size_t>(d));
  if (hist) {
    a.ech.resize(static_cast<std::size_t>(d));
    a.erh.resize(static_cast<std::size_t>(d));
    a.afh.resize(static_cast<std::size_t>(d));
  }
  for (Eigen::Index k = 0; k < d; ++k) {
    const Mmt m = find_mmt(c.col(k), ev.grid(), window);
    a.fallbacks += m.fallback ? 1 : 0;
    c.col(k).array() -= c(m.index, k);
    a.mmt[static_cast<std::size_t>(k)] = m.temperature;
    a.mmp[static_cast<std::size_t>(k)] = m.percentile;
    if (hist) {
      const Burden b = heat_burden(c.col(k), m.index, *hist);
      a.ech[static_cast<std::size_t>(k)] = b.ech;
      a.erh[static_cast<std::size_t>(k)] = b.erh;
      a.afh[static_cast<std::size_t>(k)] = b.afh;
    }
  }
  a.curve = summarize_curves(c);
  a.mmt_summary = summarize(a.mmt);
  a.mmp_summary = summarize(a.mmp);
  if (hist) {
    a.ech_summary = summarize(a.ech);
    a.erh_summary = summarize(a.erh);
    a.afh_summary = summarize(a.afh);
  }
  return a;
}

struct MetricsResult {
  std::vector<double> grid;
  std::vector<AreaMetrics> areas;
  std::vector<double> erh_exceedance;
  double erh_threshold = 0.0;
  int fallbacks = 0;
  int afh_missing_areas = 0;
};

/// All per-area metrics. `erh_threshold` defaults (NaN) to the mean of the
/// per-area posterior median ERH.
inline MetricsResult compute_metrics(const Eigen::MatrixXd& latent, const LatentLayout& layout, const AnalysisTable& table,
                                     const CurveEvaluator& ev, double erh_threshold = kNaN) {
  MetricsResult r;
  r.grid = ev.grid();
  const auto hist = bin_deaths(table, ev.grid());
  const auto windows = area_windows(table);
  const int n = table.n_areas;
  r.areas.resize(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int m = 0; m < n; ++m)
    r.areas[static_cast<std::size_t>(m)] =
        unit_metrics(ev, area_coefficients(latent, layout, m), windows[static_cast<std::size_t>(m)], &hist[static_cast<std::size_t>(m)]);
  double mean = 0.0;
  for (const auto& a : r.areas) {
    r.fallbacks += a.fallbacks;
    r.afh_missing_areas += std::isnan(a.afh_summary.median) ? 1 : 0;
    mean += a.erh_summary.median;
  }
  r.erh_threshold = std::isnan(erh_threshold) ? mean / n : erh_threshold;
  for (const auto& a : r.areas) r.erh_exceedance.push_back(exceedance(a.erh, r.erh_threshold));
  return r;
}

// ---------------------------------------------------------------------------
// Cantonal aggregation

enum class WeightScheme { population, variance };

inline WeightScheme parse_scheme(const std::string& s) {
  if (s == "population") return WeightScheme::population;
  if (s == "variance") return WeightScheme::variance;
  throw InputError("unknown weighting scheme '" + s + "' (expected population or variance)");
}

inline const char* scheme_name(WeightScheme s) { return s == WeightScheme::population ? "population" : "variance"; }

struct CantonWeights {
  int canton = 0;
  std::vector<int> areas;
  Eigen::MatrixXd w;  // kSplineCols x |areas|, each row sums to 1
};

/// Population scheme: w_k = P_k / P_c for every coefficient. Variance
/// scheme: w_jk proportional to 1 / var(beta_jk) within the canton.
inline std::vector<CantonWeights> canton_weights(const AreaGraph& g, std::span<const double> population,
                                                 const Eigen::MatrixXd& coef_variance, WeightScheme scheme) {
  const int nc = g.n_cantons();
  std::vector<CantonWeights> out(static_cast<std::size_t>(nc));
  for (int c = 0; c < nc; ++c) out[static_cast<std::size_t>(c)].canton = c;
  for (int m = 0; m < g.n_areas; ++m) out[static_cast<std::size_t>(g.canton_of[static_cast<std::size_t>(m)])].areas.push_back(m);
  for (auto& cw : out) {
    const auto k = static_cast<Eigen::Index>(cw.areas.size());
    if (k == 0) throw InputError("canton " + std::to_string(cw.canton) + " has no municipalities");
    cw.w.resize(kSplineCols, k);
    if (scheme == WeightScheme::population) {
      double total = 0.0;
      for (int m : cw.areas) total += population[static_cast<std::size_t>(m)];
      if (!(total > 0.0)) throw InputError("canton " + std::to_string(cw.canton) + " has zero total population");
      for (Eigen::Index i = 0; i < k; ++i) cw.w.col(i).setConstant(population[static_cast<std::size_t>(cw.areas[static_cast<std::size_t>(i)])] / total);
    } else {
      for (int j = 0; j < kSplineCols; ++j) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < k; ++i) {
          const double v = coef_variance(cw.areas[static_cast<std::size_t>(i)], j);
          if (!(v > 0.0) || !std::isfinite(v))
            throw InputError("inverse-variance weights need a positive coefficient variance (area " +
                             std::to_string(cw.areas[static_cast<std::size_t>(i)]) + ")");
          cw.w(j, i) = 1.0 / v;
          total += cw.w(j, i);
        }
        cw.w.row(j) /= total;
      }
    }
  }
  return out;
}

/// Per-area sample variance of each coefficient across draws (areas x kSplineCols).
inline Eigen::MatrixXd coefficient_variances(const Eigen::MatrixXd& latent, const LatentLayout& layout) {
  Eigen::MatrixXd v(layout.n_areas, kSplineCols);
  const double d = static_cast<double>(latent.cols());
  if (latent.cols() < 2) throw InputError("coefficient variances need at least two draws");
  for (int m = 0; m < layout.n_areas; ++m) {
    const Eigen::MatrixXd b = area_coefficients(latent, layout, m);
    for (int j = 0; j < kSplineCols; ++j) {
      const double mean = b.row(j).mean();
      v(m, j) = (b.row(j).array() - mean).square().sum() / (d - 1.0);
    }
  }
  return v;
}

inline Eigen::MatrixXd aggregate_coefficients(const Eigen::MatrixXd& latent, const LatentLayout& layout, const CantonWeights& cw) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(kSplineCols, latent.cols());
  for (std::size_t i = 0; i < cw.areas.size(); ++i) {
    const Eigen::MatrixXd b = area_coefficients(latent, layout, cw.areas[i]);
    for (int j = 0; j < kSplineCols; ++j) out.row(j) += cw.w(j, static_cast<Eigen::Index>(i)) * b.row(j);
  }
  return out;
}

/// Mean relative risk over grid temperatures above the MMT, per draw.
inline std::vector<double> heat_rr(const CurveEvaluator& ev, const Eigen::MatrixXd& coef_draws, const ExposureWindow& window) {
  const Eigen::MatrixXd c = ev.curves(coef_draws);
  std::vector<double> out(static_cast<std::size_t>(c.cols()));
  for (Eigen::Index k = 0; k < c.cols(); ++k) {
    const Mmt m = find_mmt(c.col(k), ev.grid(), window);
    double s = 0.0;
    int cnt = 0;
    for (Eigen::Index i = m.index + 1; i < c.rows(); ++i) {
      s += std::exp(c(i, k) - c(m.index, k));
      ++cnt;
    }
    out[static_cast<std::size_t>(k)] = cnt > 0 ? s / cnt : 1.0;
  }
  return out;
}

struct CantonResult {
  int canton = 0;
  AreaMetrics metrics;  // curve, MMT; burden fields empty
  std::vector<double> heat_rr;
  Summary heat_rr_summary;
  double heat_rr_exceedance = kNaN;
};

struct AggregationResult {
  WeightScheme scheme = WeightScheme::population;
  std::vector<CantonWeights> weights;
  std::vector<CantonResult> cantons;
  AreaMetrics national_fixed;       // beta alone
  AreaMetrics national_population;  // population-weighted over all areas
  double heat_rr_threshold = 0.0;
};

inline AggregationResult aggregate_cantons(const Eigen::MatrixXd& latent, const LatentLayout& layout, const AnalysisTable& table,
                                           const AreaGraph& g, const CurveEvaluator& ev, WeightScheme scheme,
                                           double rr_threshold = kNaN) {
  AggregationResult r;
  r.scheme = scheme;
  const auto hist = bin_deaths(table, ev.grid());
  std::vector<double> pop(hist.size());
  for (std::size_t m = 0; m < hist.size(); ++m) pop[m] = hist[m].population;
  const Eigen::MatrixXd var = scheme == WeightScheme::variance ? coefficient_variances(latent, layout) : Eigen::MatrixXd();
  r.weights = canton_weights(g, pop, var, scheme);

  std::vector<std::vector<double>> canton_x(r.weights.size());
  for (std::size_t i = 0; i < table.size(); ++i)
    canton_x[static_cast<std::size_t>(g.canton_of[static_cast<std::size_t>(table.area[i])])].push_back(table.exposure[i]);

  r.cantons.resize(r.weights.size());
  double mean = 0.0;
  for (std::size_t c = 0; c < r.weights.size(); ++c) {
    const Eigen::MatrixXd b = aggregate_coefficients(latent, layout, r.weights[c]);
    const ExposureWindow w = ExposureWindow::of(canton_x[c]);
    auto& cr = r.cantons[c];
    cr.canton = static_cast<int>(c);
    cr.metrics = unit_metrics(ev, b, w, nullptr);
    cr.heat_rr = heat_rr(ev, b, w);
    cr.heat_rr_summary = summarize(cr.heat_rr);
    mean += cr.heat_rr_summary.median;
  }
  r.heat_rr_threshold = std::isnan(rr_threshold) ? mean / static_cast<double>(r.cantons.size()) : rr_threshold;
  if (latent.cols() >= 100)
    for (auto& cr : r.cantons) cr.heat_rr_exceedance = exceedance(cr.heat_rr, r.heat_rr_threshold);

  const ExposureWindow all = ExposureWindow::of(table.exposure);
  r.national_fixed = unit_metrics(ev, fixed_coefficients(latent), all, nullptr);
  CantonWeights nation;
  for (int m = 0; m < g.n_areas; ++m) nation.areas.push_back(m);
  double total = 0.0;
  for (double p : pop) total += p;
  if (!(total > 0.0)) throw InputError("total population is zero");
  nation.w.resize(kSplineCols, g.n_areas);
  for (int m = 0; m < g.n_areas; ++m) nation.w.col(m).setConstant(pop[static_cast<std::size_t>(m)] / total);
  r.national_population = unit_metrics(ev, aggregate_coefficients(latent, layout, nation), all, nullptr);
  return r;
}

}  // namespace heatsvc
