#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "heatsvc/config.hpp"
#include "heatsvc/error.hpp"
#include "heatsvc/gmrf.hpp"
#include "heatsvc/graph.hpp"
#include "heatsvc/ingest.hpp"
#include "heatsvc/latent_model.hpp"
#include "heatsvc/metrics.hpp"
#include "heatsvc/modifier_records.hpp"
#include "heatsvc/spline.hpp"

namespace heatsvc {

/// Generating parameters of a synthetic study. Variances may be zero.
struct SimConfig {
  int nx = 10;
  int ny = 10;
  int cantons_x = 2;  // canton blocks along x
  int cantons_y = 2;
  int years = 3;
  int first_year = 2011;
  std::uint64_t seed = 1;

  double reference_temp = 12.0;
  double beta0 = -9.6;  // log daily death rate at the reference temperature
  // True exposure-response: when `beta` is empty the coefficients are the
  // cardinal values at the knots of the asymmetric parabola
  //   cold * (t0 - x)^2 below t0,  heat * (x - t0)^2 above.
  std::vector<double> beta;
  double curve_min_temp = 17.0;
  double curve_cold = 0.003;
  double curve_heat = 0.0035;
  std::array<double, kCalendarCols> gamma{0.03, 0.01, 0.0, 0.0, 0.01, -0.02, -0.05};

  std::array<double, 4> sigma_beta{0.02, 0.02, 0.03, 0.06};
  std::array<double, 4> phi_beta{0.5, 0.5, 0.5, 0.5};
  double sigma_b = 0.1;
  double phi_b = 0.5;
  double sigma_omega = 0.002;
  double sigma_delta = 0.05;

  double pop_median = 30000.0;
  double pop_log_sd = 0.5;
  double pop_growth = 0.005;  // per year

  double temp_mean = 19.0;
  double temp_gradient_x = -3.0;  // west-east difference in area means
  double temp_gradient_y = -2.0;
  double season_amplitude = 4.0;
  double ar_rho = 0.8;
  double ar_sd = 2.5;      // marginal SD of the daily anomaly
  double ar_shared = 0.7;  // share of anomaly variance common to all areas

  void validate() const {
    if (nx < 2 || ny < 2) throw InputError("simulation lattice must be at least 2 x 2");
    if (cantons_x < 1 || cantons_y < 1 || cantons_x > nx || cantons_y > ny)
      throw InputError("canton blocks must satisfy 1 <= cantons_x <= nx and 1 <= cantons_y <= ny");
    if (years < 1) throw InputError("simulation needs at least one year");
    if (!beta.empty() && beta.size() != kSplineCols) throw InputError("beta must have exactly 4 values");
    for (double s : sigma_beta)
      if (!(s >= 0.0)) throw InputError("sigma_beta must be non-negative");
    for (double p : phi_beta)
      if (!(p >= 0.0 && p <= 1.0)) throw InputError("phi_beta must lie in [0, 1]");
    if (!(sigma_b >= 0.0) || !(sigma_omega >= 0.0) || !(sigma_delta >= 0.0)) throw InputError("variance parameters must be non-negative");
    if (!(phi_b >= 0.0 && phi_b <= 1.0)) throw InputError("phi_b must lie in [0, 1]");
    if (!(pop_median > 0.0) || !(pop_log_sd >= 0.0)) throw InputError("population parameters must be positive");
    if (!(ar_rho > -1.0 && ar_rho < 1.0)) throw InputError("ar_rho must lie in (-1, 1)");
    if (!(ar_sd >= 0.0) || !(ar_shared >= 0.0 && ar_shared <= 1.0)) throw InputError("invalid exposure noise parameters");
  }

  static SimConfig from(const Config& c) {
    SimConfig s;
    s.nx = static_cast<int>(c.get_int("nx", s.nx));
    s.ny = static_cast<int>(c.get_int("ny", s.ny));
    s.cantons_x = static_cast<int>(c.get_int("cantons_x", s.cantons_x));
    s.cantons_y = static_cast<int>(c.get_int("cantons_y", s.cantons_y));
    s.years = static_cast<int>(c.get_int("years", s.years));
    s.first_year = static_cast<int>(c.get_int("first_year", s.first_year));
    s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(s.seed)));
    s.reference_temp = c.get_double("reference_temp", s.reference_temp);
    s.beta0 = c.get_double("beta0", s.beta0);
    s.beta = c.get_doubles("beta", s.beta);
    s.curve_min_temp = c.get_double("curve_min_temp", s.curve_min_temp);
    s.curve_cold = c.get_double("curve_cold", s.curve_cold);
    s.curve_heat = c.get_double("curve_heat", s.curve_heat);
    auto arr = [&](const char* key, auto& target) {
      const std::vector<double> v = c.get_doubles(key, std::vector<double>(target.begin(), target.end()));
      if (v.size() != target.size())
        throw InputError(c.source() + ": '" + key + "' needs " + std::to_string(target.size()) + " values");
      std::copy(v.begin(), v.end(), target.begin());
    };
    arr("gamma", s.gamma);
    arr("sigma_beta", s.sigma_beta);
    arr("phi_beta", s.phi_beta);
    s.sigma_b = c.get_double("sigma_b", s.sigma_b);
    s.phi_b = c.get_double("phi_b", s.phi_b);
    s.sigma_omega = c.get_double("sigma_omega", s.sigma_omega);
    s.sigma_delta = c.get_double("sigma_delta", s.sigma_delta);
    s.pop_median = c.get_double("pop_median", s.pop_median);
    s.pop_log_sd = c.get_double("pop_log_sd", s.pop_log_sd);
    s.pop_growth = c.get_double("pop_growth", s.pop_growth);
    s.temp_mean = c.get_double("temp_mean", s.temp_mean);
    s.temp_gradient_x = c.get_double("temp_gradient_x", s.temp_gradient_x);
    s.temp_gradient_y = c.get_double("temp_gradient_y", s.temp_gradient_y);
    s.season_amplitude = c.get_double("season_amplitude", s.season_amplitude);
    s.ar_rho = c.get_double("ar_rho", s.ar_rho);
    s.ar_sd = c.get_double("ar_sd", s.ar_sd);
    s.ar_shared = c.get_double("ar_shared", s.ar_shared);
    s.validate();
    return s;
  }
};

/// Queen lattice, row-major area ids, cantons as rectangular blocks.
inline AreaGraph synth_geography(int nx, int ny, int cantons_x, int cantons_y) {
  if (nx < 2 || ny < 2) throw InputError("lattice must be at least 2 x 2");
  std::vector<std::pair<int, int>> edges;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx <= 0) continue;
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || xx >= nx || yy >= ny) continue;
          edges.emplace_back(y * nx + x, yy * nx + xx);
        }
  std::vector<int> canton(static_cast<std::size_t>(nx * ny));
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      const int bx = x * cantons_x / nx, by = y * cantons_y / ny;
      canton[static_cast<std::size_t>(y * nx + x)] = by * cantons_x + bx;
    }
  return build_graph(nx * ny, edges, canton);
}

/// Coefficients of the true exposure-response for a given basis.
inline Eigen::Vector4d true_beta(const SimConfig& cfg, const SplineBasis& basis) {
  if (!cfg.beta.empty()) return Eigen::Vector4d(cfg.beta[0], cfg.beta[1], cfg.beta[2], cfg.beta[3]);
  auto f = [&](double x) {
    const double d = x - cfg.curve_min_temp;
    return d < 0 ? cfg.curve_cold * d * d : cfg.curve_heat * d * d;
  };
  const auto& k = basis.knots();
  const std::array<double, 4> t = {k.interior[0], k.interior[1], k.interior[2], k.boundary[1]};
  Eigen::Vector4d b;
  for (int j = 0; j < 4; ++j) b[j] = f(t[static_cast<std::size_t>(j)]) - f(k.boundary[0]);
  return b;
}

struct SimTruth {
  double beta0 = 0.0;
  Eigen::Vector4d beta = Eigen::Vector4d::Zero();
  Eigen::VectorXd gamma;
  Eigen::MatrixXd beta_prime;  // 4 x n
  Eigen::VectorXd b;
  Eigen::VectorXd omega;
  Eigen::VectorXd delta;
  std::vector<double> grid;
  std::vector<Eigen::VectorXd> curves;  // MMT-rescaled logRR per area
  std::vector<double> mmt, mmp, ech, erh, afh, expected_deaths;
  double national_mmt = 0.0;
};

struct Simulation {
  SimConfig config;
  RawDataset data;
  AnalysisTable table;
  ScaledStructure structure;
  SplineBasis basis;
  SimTruth truth;
  Eigen::VectorXd expected;  // noise-free expected counts per analysis row
  std::vector<ModifierRecord> modifiers;
};

namespace detail {

inline Eigen::VectorXd draw_rw2(double sigma, Rng& rng) {
  if (sigma == 0.0) return Eigen::VectorXd::Zero(kSummerDays);
  const Eigen::MatrixXd r = rw2_structure(kSummerDays) / (sigma * sigma);
  std::vector<Eigen::Triplet<double>> t;
  for (int c = 0; c < kSummerDays; ++c)
    for (int i = c; i < std::min(kSummerDays, c + 3); ++i) t.emplace_back(i, c, r(i, c));
  ConstrainedFactor f;
  const std::vector<Eigen::Index> pins = {0, kSummerDays - 1};
  f.factorize(lower_from_triplets(kSummerDays, t), rw2_constraints(kSummerDays), pins);
  return f.sample(rng);
}

}  // namespace detail

/// Full synthetic study: geography, exposures, populations, latent truth,
/// Poisson counts, modifiers and the true metrics.
inline Simulation simulate(const SimConfig& cfg) {
  cfg.validate();
  Simulation sim;
  sim.config = cfg;
  Rng rng(cfg.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const AreaGraph g = synth_geography(cfg.nx, cfg.ny, cfg.cantons_x, cfg.cantons_y);
  const int n = g.n_areas;
  RawDataset& ds = sim.data;
  ds.n_areas = n;
  ds.edges = g.edges;
  ds.canton_of = g.canton_of;
  ds.holidays = default_holidays(cfg.first_year, cfg.first_year + cfg.years - 1);

  // area mean temperatures on a linear gradient
  std::vector<double> area_mean(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) {
    const double fx = cfg.nx > 1 ? static_cast<double>(m % cfg.nx) / (cfg.nx - 1) - 0.5 : 0.0;
    const double fy = cfg.ny > 1 ? static_cast<double>(m / cfg.nx) / (cfg.ny - 1) - 0.5 : 0.0;
    area_mean[static_cast<std::size_t>(m)] = cfg.temp_mean + cfg.temp_gradient_x * fx + cfg.temp_gradient_y * fy;
  }

  // temperatures: one grid cell per area, mean + season + AR(1) anomaly
  const double innov = std::sqrt(1.0 - cfg.ar_rho * cfg.ar_rho);
  const double sd_shared = cfg.ar_sd * std::sqrt(cfg.ar_shared), sd_local = cfg.ar_sd * std::sqrt(1.0 - cfg.ar_shared);
  const int days = kSummerDays + kMaxLag;
  for (int yi = 0; yi < cfg.years; ++yi) {
    const int year = cfg.first_year + yi;
    const Date first = summer_start(year) - kMaxLag;
    std::vector<double> shared(static_cast<std::size_t>(days));
    double a = z(rng);
    for (int k = 0; k < days; ++k) {
      if (k > 0) a = cfg.ar_rho * a + innov * z(rng);
      shared[static_cast<std::size_t>(k)] = sd_shared * a;
    }
    for (int m = 0; m < n; ++m) {
      double l = z(rng);
      auto& series = ds.temperature[m];
      for (int k = 0; k < days; ++k) {
        if (k > 0) l = cfg.ar_rho * l + innov * z(rng);
        const double season = cfg.season_amplitude * (std::sin(std::numbers::pi * (k + 0.5) / days) - 2.0 / std::numbers::pi);
        series[first + k] = area_mean[static_cast<std::size_t>(m)] + season + shared[static_cast<std::size_t>(k)] + sd_local * l;
      }
    }
  }
  for (int m = 0; m < n; ++m) ds.weights[m] = {{static_cast<long long>(m), 1.0}};

  // populations: year-end counts from the year before the study onwards
  for (int m = 0; m < n; ++m) {
    const double base = cfg.pop_median * std::exp(cfg.pop_log_sd * z(rng));
    for (int yi = -1; yi < cfg.years; ++yi)
      ds.population[m].emplace_back(cfg.first_year + yi, std::round(base * std::pow(1.0 + cfg.pop_growth, yi + 1)));
  }
  // placeholder deaths define the study days; replaced below
  for (int m = 0; m < n; ++m)
    for (int yi = 0; yi < cfg.years; ++yi)
      for (int k = 0; k < kSummerDays; ++k) ds.deaths[{m, summer_start(cfg.first_year + yi) + k}] = 0;
  sim.table = assemble_table(ds);
  sim.structure = bym2_scaling(g);
  sim.basis = SplineBasis(knots_from_quantiles(sim.table.exposure), cfg.reference_temp);

  // latent truth
  SimTruth& tr = sim.truth;
  tr.beta0 = cfg.beta0;
  tr.beta = true_beta(cfg, sim.basis);
  tr.gamma = Eigen::Map<const Eigen::VectorXd>(cfg.gamma.data(), kCalendarCols);
  tr.beta_prime.resize(kSplineCols, n);
  for (int j = 0; j < kSplineCols; ++j)
    tr.beta_prime.row(j) = sample_bym2(cfg.sigma_beta[static_cast<std::size_t>(j)], cfg.phi_beta[static_cast<std::size_t>(j)], sim.structure, rng).transpose();
  tr.b = sample_bym2(cfg.sigma_b, cfg.phi_b, sim.structure, rng);
  tr.omega = detail::draw_rw2(cfg.sigma_omega, rng);
  tr.delta.resize(cfg.years);
  for (int t = 0; t < cfg.years; ++t) tr.delta[t] = cfg.sigma_delta * z(rng);

  // expected and observed counts
  const std::size_t rows = sim.table.size();
  sim.expected.resize(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    const int m = sim.table.area[r];
    const SplineBasis::Row xc = sim.basis.evaluate(sim.table.exposure[r], true);
    double eta = tr.beta0 + tr.b[m] + tr.omega[sim.table.day_index[r]] + tr.delta[sim.table.year_index[r]];
    for (int j = 0; j < kSplineCols; ++j) eta += xc[j] * (tr.beta[j] + tr.beta_prime(j, m));
    for (int k = 0; k < kCalendarCols; ++k) eta += sim.table.calendar[r].value(k) * tr.gamma[k];
    const double mu = sim.table.population[r] * std::exp(eta);
    sim.expected[static_cast<Eigen::Index>(r)] = mu;
    std::poisson_distribution<int> pois(mu);
    const int y = pois(rng);
    sim.table.deaths[r] = y;
    ds.deaths[{m, sim.table.date[r]}] = y;
  }

  // true metrics from noise-free expected counts
  const CurveEvaluator ev(sim.basis);
  tr.grid = ev.grid();
  const auto hist = bin_values(sim.table, ev.grid(), std::span<const double>(sim.expected.data(), rows));
  const auto windows = area_windows(sim.table);
  for (int m = 0; m < n; ++m) {
    const Eigen::VectorXd coef = tr.beta + tr.beta_prime.col(m);
    const Eigen::VectorXd c = ev.curve(coef);
    const Mmt mmt = find_mmt(c, ev.grid(), windows[static_cast<std::size_t>(m)]);
    const Eigen::VectorXd rc = rescale_to_mmt(c, mmt.index);
    const Burden b = heat_burden(rc, mmt.index, hist[static_cast<std::size_t>(m)]);
    tr.curves.push_back(rc);
    tr.mmt.push_back(mmt.temperature);
    tr.mmp.push_back(mmt.percentile);
    tr.ech.push_back(b.ech);
    tr.erh.push_back(b.erh);
    tr.afh.push_back(b.afh);
    tr.expected_deaths.push_back(hist[static_cast<std::size_t>(m)].total);
  }
  tr.national_mmt = find_mmt(ev.curve(tr.beta), ev.grid(), ExposureWindow::of(sim.table.exposure)).temperature;

  // modifiers: categorical levels cycle through a random permutation so
  // that every level occurs
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> mean_x(static_cast<std::size_t>(n), 0.0);
  for (std::size_t m = 0; m < static_cast<std::size_t>(n); ++m) mean_x[m] = quantile(windows[m].sorted, 0.5);
  const int nc = g.n_cantons();
  for (int m = 0; m < n; ++m) {
    ModifierRecord rec;
    rec.area_id = m;
    rec.pct_over_85 = std::max(0.2, 3.0 + 1.0 * z(rng));
    rec.ndvi = std::clamp(0.5 + 0.12 * z(rng), -1.0, 1.0);
    rec.mean_temp = mean_x[static_cast<std::size_t>(m)];
    rec.no2 = std::max(5.0, 150.0 + 50.0 * z(rng));
    rec.sep_class = perm[static_cast<std::size_t>(m)] % 3;
    rec.urbanicity = (perm[static_cast<std::size_t>(m)] / 3) % 3;
    const int c = g.canton_of[static_cast<std::size_t>(m)];
    rec.language = nc >= 3 ? std::min(2, c * 3 / nc) : perm[static_cast<std::size_t>(m)] % 3;
    sim.modifiers.push_back(rec);
  }
  return sim;
}

inline nlohmann::json truth_json(const Simulation& sim) {
  using nlohmann::json;
  const SimTruth& t = sim.truth;
  const SimConfig& c = sim.config;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json j;
  j["seed"] = c.seed;
  j["lattice"] = {{"nx", c.nx}, {"ny", c.ny}, {"cantons_x", c.cantons_x}, {"cantons_y", c.cantons_y}};
  j["years"] = c.years;
  j["first_year"] = c.first_year;
  j["reference_temp"] = c.reference_temp;
  const auto& k = sim.basis.knots();
  j["knots"] = {{"boundary", {k.boundary[0], k.boundary[1]}}, {"interior", {k.interior[0], k.interior[1], k.interior[2]}}};
  j["beta0"] = t.beta0;
  j["beta"] = vec(t.beta);
  j["gamma"] = vec(t.gamma);
  j["hyper"] = {{"sigma_beta", c.sigma_beta}, {"phi_beta", c.phi_beta}, {"sigma_b", c.sigma_b}, {"phi_b", c.phi_b},
                {"sigma_omega", c.sigma_omega}, {"sigma_delta", c.sigma_delta}};
  j["omega"] = vec(t.omega);
  j["delta"] = vec(t.delta);
  j["national_mmt"] = t.national_mmt;
  j["grid"] = t.grid;
  json areas = json::array();
  for (int m = 0; m < sim.data.n_areas; ++m) {
    const auto mm = static_cast<std::size_t>(m);
    json a;
    a["area_id"] = m;
    a["beta_prime"] = vec(t.beta_prime.col(m));
    a["b"] = t.b[m];
    a["mmt"] = t.mmt[mm];
    a["mmp"] = t.mmp[mm];
    a["ech"] = t.ech[mm];
    a["erh_per_1000"] = t.erh[mm];
    a["afh"] = std::isnan(t.afh[mm]) ? json(nullptr) : json(t.afh[mm]);
    a["expected_deaths"] = t.expected_deaths[mm];
    a["logrr"] = vec(t.curves[mm]);
    areas.push_back(a);
  }
  j["areas"] = areas;
  return j;
}

inline void write_simulation(const std::filesystem::path& dir, const Simulation& sim) {
  write_dataset(dir, sim.data);
  write_modifiers(dir / "modifiers.csv", sim.modifiers);
  std::ofstream out(dir / "truth.json");
  if (!out) throw InputError("cannot write " + (dir / "truth.json").string());
  out << truth_json(sim).dump(1) << '\n';
  if (!out) throw InputError("failed writing truth.json");
}

}  // namespace heatsvc
