#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "heatsvc/metrics.hpp"
#include "heatsvc/simulator.hpp"

using namespace heatsvc;

namespace {

SplineBasis test_basis() {
  KnotSet k;
  k.boundary = {5.0, 30.0};
  k.interior = {10.0, 20.0, 25.0};
  return SplineBasis(k, 12.0);
}

/// Table with one area per entry of `xs`, one row per exposure value.
AnalysisTable table_of(const std::vector<std::vector<double>>& xs, const std::vector<std::vector<int>>& ys, double pop = 1000.0) {
  AnalysisTable t;
  t.n_areas = static_cast<int>(xs.size());
  t.years = {2020};
  for (std::size_t m = 0; m < xs.size(); ++m)
    for (std::size_t i = 0; i < xs[m].size(); ++i)
      t.push(static_cast<int>(m), summer_start(2020) + static_cast<int>(i), ys[m][i], pop, xs[m][i], CalendarCovariates{}, 0);
  return t;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  return v;
}

}  // namespace

TEST(Curves, ZeroCoefficientsGiveFlatZero) {
  const CurveEvaluator ev(test_basis());
  EXPECT_EQ(ev.size(), kGridPoints);
  EXPECT_EQ(ev.curve(Eigen::Vector4d::Zero()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Curves, ZeroAtReferenceForEveryDraw) {
  const SplineBasis b = test_basis();
  const CurveEvaluator ev(b, {5.0, 12.0, 30.0});
  Rng rng(1);
  const Eigen::MatrixXd beta = Eigen::MatrixXd(standard_normal(rng, 40).reshaped(4, 10));
  const Eigen::MatrixXd c = ev.curves(beta);
  for (Eigen::Index k = 0; k < c.cols(); ++k) EXPECT_EQ(c(1, k), 0.0);
}

TEST(Curves, MatchesHandMultipliedBasis) {
  const SplineBasis b = test_basis();
  const CurveEvaluator ev(b);
  const Eigen::Vector4d beta(0.1, -0.2, 0.05, 0.4);
  const Eigen::VectorXd c = ev.curve(beta);
  for (std::size_t i = 0; i < ev.grid().size(); i += 17) {
    const SplineBasis::Row raw = b.evaluate(ev.grid()[i], false);
    const SplineBasis::Row ref = b.evaluate(12.0, false);
    double expect = 0.0;
    for (int j = 0; j < 4; ++j) expect += (raw[j] - ref[j]) * beta[j];
    EXPECT_NEAR(c[static_cast<Eigen::Index>(i)], expect, 1e-12);
  }
}

TEST(Curves, GridOutsideDomainRejected) {
  EXPECT_THROW(CurveEvaluator(test_basis(), {4.0, 10.0}), InputError);
  EXPECT_THROW(CurveEvaluator(test_basis(), {10.0, 10.0}), InputError);
}

TEST(Binning, NearestGridPointAndLowerTieBreak) {
  const std::vector<double> grid = {10.0, 11.0, 12.0};
  EXPECT_EQ(nearest_grid_index(grid, 11.0), 1);
  EXPECT_EQ(nearest_grid_index(grid, 10.5), 0);
  EXPECT_EQ(nearest_grid_index(grid, 11.5), 1);
  EXPECT_EQ(nearest_grid_index(grid, 11.6), 2);
  EXPECT_EQ(nearest_grid_index(grid, 12.0), 2);
  EXPECT_THROW(nearest_grid_index(grid, 12.5), InputError);
}

TEST(Binning, SingleDeathAtGridPoint) {
  const std::vector<double> grid = {10.0, 11.0, 12.0};
  const AnalysisTable t = table_of({{11.0, 10.2}}, {{1, 0}});
  const auto h = bin_deaths(t, grid);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0].counts[1], 1.0);
  EXPECT_EQ(h[0].counts.sum(), 1.0);
  EXPECT_EQ(h[0].population, 1000.0);
}

TEST(Binning, TotalsMatchRecordsOnSimulation) {
  SimConfig cfg;
  cfg.nx = 3;
  cfg.ny = 3;
  cfg.cantons_x = 1;
  cfg.cantons_y = 1;
  cfg.years = 1;
  const Simulation sim = simulate(cfg);
  const CurveEvaluator ev(sim.basis);
  const auto h = bin_deaths(sim.table, ev.grid());
  std::vector<double> direct(9, 0.0), pop(9, 0.0);
  std::vector<int> rows(9, 0);
  for (std::size_t r = 0; r < sim.table.size(); ++r) {
    direct[static_cast<std::size_t>(sim.table.area[r])] += sim.table.deaths[r];
    pop[static_cast<std::size_t>(sim.table.area[r])] += sim.table.population[r];
    ++rows[static_cast<std::size_t>(sim.table.area[r])];
  }
  for (std::size_t m = 0; m < 9; ++m) {
    EXPECT_EQ(h[m].total, direct[m]);
    EXPECT_EQ(h[m].counts.sum(), direct[m]);
    EXPECT_NEAR(h[m].population, pop[m] / rows[m], 1e-9 * pop[m]);
  }
}

TEST(Mmt, IncreasingCurveGivesWindowLowerEdge) {
  const auto xs = linspace(10.0, 30.0, 81);
  const ExposureWindow w = ExposureWindow::of(xs);
  EXPECT_DOUBLE_EQ(w.lower, 15.0);
  EXPECT_DOUBLE_EQ(w.upper, 28.0);
  const auto grid = linspace(10.0, 30.0, 201);
  Eigen::VectorXd c(201);
  for (int i = 0; i < 201; ++i) c[i] = 0.01 * i;
  const Mmt m = find_mmt(c, grid, w);
  EXPECT_FALSE(m.fallback);
  EXPECT_NEAR(m.temperature, 15.0, 1e-12);
  EXPECT_NEAR(m.percentile, 25.0, 1e-9);
}

TEST(Mmt, UCurveCenteredInWindowGivesVertex) {
  const ExposureWindow w = ExposureWindow::of(linspace(10.0, 30.0, 81));
  const auto grid = linspace(10.0, 30.0, 201);
  Eigen::VectorXd c(201);
  for (int i = 0; i < 201; ++i) c[i] = (grid[static_cast<std::size_t>(i)] - 21.0) * (grid[static_cast<std::size_t>(i)] - 21.0);
  const Mmt m = find_mmt(c, grid, w);
  EXPECT_NEAR(m.temperature, 21.0, 1e-12);
  EXPECT_EQ(m.index, 110);
}

TEST(Mmt, TiesGoToLowestTemperature) {
  const ExposureWindow w = ExposureWindow::of(linspace(10.0, 30.0, 81));
  const auto grid = linspace(10.0, 30.0, 201);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(201, 0.3);
  EXPECT_NEAR(find_mmt(c, grid, w).temperature, 15.0, 1e-12);
}

TEST(Mmt, EmptyWindowFallsBackToFullGrid) {
  ExposureWindow w = ExposureWindow::of(linspace(10.0, 30.0, 81));
  const std::vector<double> grid = {10.0, 10.5, 11.0, 31.0};
  Eigen::VectorXd c(4);
  c << 0.2, 0.1, 0.3, 0.5;
  const Mmt m = find_mmt(c, grid, w);
  EXPECT_TRUE(m.fallback);
  EXPECT_EQ(m.index, 1);
}

TEST(Rescale, DefiningPropertiesAndIdempotence) {
  Eigen::VectorXd c(5);
  c << 0.4, 0.1, -0.2, 0.3, 0.9;
  const Eigen::VectorXd r = rescale_to_mmt(c, 2);
  EXPECT_EQ(r[2], 0.0);
  EXPECT_EQ(rescale_to_mmt(r, 2), r);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(r[i] - r[j], c[i] - c[j], 1e-15);
  EXPECT_EQ(rescale_to_mmt(Eigen::VectorXd::Constant(4, 0.7), 1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Burden, AttributableFractionProperties) {
  EXPECT_EQ(attributable_fraction(0.0), 0.0);
  double prev = -std::numeric_limits<double>::infinity();
  for (double lr = -3.0; lr <= 5.0; lr += 0.01) {
    const double af = attributable_fraction(lr);
    EXPECT_LT(af, 1.0);
    EXPECT_GT(af, prev);
    EXPECT_NEAR(af, (std::exp(lr) - 1.0) / std::exp(lr), 1e-12);
    prev = af;
  }
}

TEST(Burden, RelativeRiskTwoAtOnePoint) {
  DeathHistogram h;
  h.counts = Eigen::VectorXd::Zero(5);
  h.counts[3] = 10.0;
  h.total = 40.0;
  h.population = 2000.0;
  Eigen::VectorXd lr = Eigen::VectorXd::Zero(5);
  lr[3] = std::log(2.0);
  const Burden b = heat_burden(lr, 1, h);
  EXPECT_NEAR(b.ech, 5.0, 1e-12);
  EXPECT_NEAR(b.erh, 5.0 / 2000.0 * 1000.0, 1e-12);
  EXPECT_NEAR(b.afh, 5.0 / 40.0, 1e-15);
  // a point at or below the MMT does not count
  EXPECT_EQ(heat_burden(lr, 3, h).ech, 0.0);
}

TEST(Burden, NoExcessWhenRelativeRiskIsOne) {
  DeathHistogram h;
  h.counts = Eigen::VectorXd::Constant(6, 3.0);
  h.total = 18.0;
  h.population = 100.0;
  const Burden b = heat_burden(Eigen::VectorXd::Zero(6), 0, h);
  EXPECT_EQ(b.ech, 0.0);
  EXPECT_EQ(b.erh, 0.0);
  EXPECT_EQ(b.afh, 0.0);
}

TEST(Burden, MissingAfhWithoutDeaths) {
  DeathHistogram h;
  h.counts = Eigen::VectorXd::Zero(3);
  h.population = 100.0;
  EXPECT_TRUE(std::isnan(heat_burden(Eigen::VectorXd::Ones(3), 0, h).afh));
  h.population = 0.0;
  EXPECT_THROW(heat_burden(Eigen::VectorXd::Ones(3), 0, h), InputError);
}

TEST(Exceedance, BoundaryCases) {
  std::vector<double> d(200);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = 1.0 + static_cast<double>(i);
  EXPECT_EQ(exceedance(d, 0.5), 1.0);
  EXPECT_EQ(exceedance(d, std::numeric_limits<double>::infinity()), 0.0);
  EXPECT_EQ(exceedance(d, 100.0), 0.5);  // strictly above
  d.resize(99);
  EXPECT_THROW(exceedance(d, 0.0), InputError);
}

TEST(Summaries, QuantilesSkipMissing) {
  std::vector<double> v;
  for (int i = 0; i <= 1000; ++i) v.push_back(i);
  v.push_back(kNaN);
  const Summary s = summarize(v);
  EXPECT_DOUBLE_EQ(s.median, 500.0);
  EXPECT_DOUBLE_EQ(s.lower, 25.0);
  EXPECT_DOUBLE_EQ(s.upper, 975.0);
  EXPECT_TRUE(std::isnan(summarize(std::vector<double>{kNaN}).median));
}

TEST(AreaMetrics, IdentitiesPerDraw) {
  SimConfig cfg;
  cfg.nx = 3;
  cfg.ny = 2;
  cfg.cantons_x = 1;
  cfg.cantons_y = 1;
  cfg.years = 2;
  const Simulation sim = simulate(cfg);
  const CurveEvaluator ev(sim.basis);
  const LatentLayout layout(6, 2, false);
  Rng rng(4);
  Eigen::MatrixXd latent = Eigen::MatrixXd::Zero(layout.size(), 150);
  for (Eigen::Index k = 0; k < latent.cols(); ++k) {
    for (int j = 0; j < 4; ++j) latent(LatentLayout::beta(j), k) = sim.truth.beta[j] + 0.1 * standard_normal(rng, 1)[0];
    for (int j = 0; j < 4; ++j) latent.block(layout.field(j), k, 6, 1) = 0.05 * standard_normal(rng, 6);
  }
  const MetricsResult r = compute_metrics(latent, layout, sim.table, ev);
  ASSERT_EQ(r.areas.size(), 6u);
  const auto hist = bin_deaths(sim.table, ev.grid());
  const auto windows = area_windows(sim.table);
  for (std::size_t m = 0; m < 6; ++m) {
    const auto& a = r.areas[m];
    for (std::size_t k = 0; k < a.ech.size(); ++k) {
      const double tol = 1e-12 * (1.0 + std::abs(a.ech[k]));
      EXPECT_NEAR(a.erh[k] * hist[m].population / kPerThousand, a.ech[k], tol);
      EXPECT_NEAR(a.afh[k] * hist[m].total, a.ech[k], tol);
      EXPECT_LE(a.afh[k], 1.0);
      const int idx = nearest_grid_index(ev.grid(), a.mmt[k]);
      EXPECT_LE(a.ech[k], hist[m].counts.tail(hist[m].counts.size() - idx - 1).sum());
      EXPECT_GE(a.mmt[k], windows[m].lower);
      EXPECT_LE(a.mmt[k], windows[m].upper);
    }
    EXPECT_GE(r.erh_exceedance[m], 0.0);
    EXPECT_LE(r.erh_exceedance[m], 1.0);
  }
  EXPECT_EQ(r.fallbacks, 0);
}

TEST(Aggregation, SingleAreaCantonIsIdentity) {
  const AreaGraph g = build_graph(3, {{0, 1}, {1, 2}}, {0, 0, 1});
  const std::vector<double> pop = {100.0, 300.0, 50.0};
  Eigen::MatrixXd var(3, 4);
  var << 1, 2, 3, 4, 2, 2, 2, 2, 0.5, 1, 1, 1;
  for (auto scheme : {WeightScheme::population, WeightScheme::variance}) {
    const auto w = canton_weights(g, pop, var, scheme);
    ASSERT_EQ(w.size(), 2u);
    EXPECT_EQ(w[1].areas, std::vector<int>{2});
    EXPECT_EQ(w[1].w, Eigen::MatrixXd::Ones(4, 1));
    for (const auto& cw : w)
      for (int j = 0; j < 4; ++j) EXPECT_NEAR(cw.w.row(j).sum(), 1.0, 1e-12);
  }
  const auto wp = canton_weights(g, pop, var, WeightScheme::population);
  EXPECT_DOUBLE_EQ(wp[0].w(0, 0), 0.25);
  const auto wv = canton_weights(g, pop, var, WeightScheme::variance);
  EXPECT_NEAR(wv[0].w(0, 0), (1.0 / 1.0) / (1.0 / 1.0 + 1.0 / 2.0), 1e-15);
  EXPECT_NEAR(wv[0].w(1, 0), 0.5, 1e-15);
}

TEST(Aggregation, EqualPopulationsAverageCoefficients) {
  const AreaGraph g = build_graph(2, {{0, 1}}, {0, 0});
  const LatentLayout layout(2, 1, false);
  Eigen::MatrixXd latent = Eigen::MatrixXd::Zero(layout.size(), 3);
  Rng rng(6);
  latent.setRandom();
  const auto w = canton_weights(g, std::vector<double>{500.0, 500.0}, Eigen::MatrixXd(), WeightScheme::population);
  const Eigen::MatrixXd agg = aggregate_coefficients(latent, layout, w[0]);
  const Eigen::MatrixXd expect = 0.5 * (area_coefficients(latent, layout, 0) + area_coefficients(latent, layout, 1));
  EXPECT_LT((agg - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Aggregation, ZeroPopulationCantonRejected) {
  const AreaGraph g = build_graph(2, {{0, 1}}, {0, 1});
  EXPECT_THROW(canton_weights(g, std::vector<double>{10.0, 0.0}, Eigen::MatrixXd(), WeightScheme::population), InputError);
  EXPECT_THROW(parse_scheme("median"), InputError);
  EXPECT_EQ(parse_scheme("variance"), WeightScheme::variance);
}
