#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "heatsvc/modifiers.hpp"
#include "heatsvc/simulator.hpp"

using namespace heatsvc;

namespace {

constexpr double kZ975 = 1.959963984540054;

struct Fixture {
  AreaGraph graph;
  ScaledStructure structure;
  std::vector<ModifierRecord> records;
  ModifierDesign design;
};

Fixture make_fixture(int nx = 6, int ny = 6, std::uint64_t seed = 3) {
  SimConfig c;
  c.nx = nx;
  c.ny = ny;
  c.cantons_x = 2;
  c.cantons_y = 2;
  c.years = 1;
  c.seed = seed;
  const Simulation sim = simulate(c);
  Fixture f;
  f.graph = synth_geography(nx, ny, 2, 2);
  f.structure = bym2_scaling(f.graph);
  f.records = sim.modifiers;
  f.design = standardize(f.records);
  return f;
}

Eigen::VectorXd noise(int n, double sd, unsigned seed) {
  Rng rng(seed);
  return sd * standard_normal(rng, n);
}

}  // namespace

TEST(Standardize, ColumnsHaveUnitSdAndDummiesPerFactor) {
  const Fixture f = make_fixture();
  const ModifierDesign& d = f.design;
  ASSERT_EQ(d.cols(), 10);
  ASSERT_EQ(d.names.size(), 10u);
  EXPECT_EQ(d.names[0], "pct_over_85");
  EXPECT_EQ(d.names[4], "sep_low");
  EXPECT_EQ(d.names[5], "sep_high");
  EXPECT_EQ(d.names[6], "urbanicity_semi-urban");
  EXPECT_EQ(d.names[8], "language_French");
  const double n = static_cast<double>(d.rows());
  for (int j = 0; j < 4; ++j) {
    EXPECT_NEAR(d.x.col(j).mean(), 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt((d.x.col(j).array() - d.x.col(j).mean()).square().sum() / (n - 1.0)), 1.0, 1e-10);
    EXPECT_GT(d.sd[static_cast<std::size_t>(j)], 0.0);
  }
  for (int j = 4; j < 10; ++j) {
    EXPECT_TRUE(std::isnan(d.sd[static_cast<std::size_t>(j)]));
    EXPECT_TRUE(((d.x.col(j).array() == 0.0) || (d.x.col(j).array() == 1.0)).all());
  }
  // baseline rows carry no dummy
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const auto& r = f.records[static_cast<std::size_t>(i)];
    EXPECT_EQ(d.x(i, 4) + d.x(i, 5), r.sep_class == 1 ? 0.0 : 1.0);
  }
}

TEST(Standardize, ConstantColumnIsInputError) {
  Fixture f = make_fixture();
  for (auto& r : f.records) r.ndvi = 0.4;
  try {
    standardize(f.records);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("ndvi"), std::string::npos);
  }
}

TEST(Standardize, SingularDesignListsCollinearColumns) {
  Fixture f = make_fixture();
  for (auto& r : f.records) r.urbanicity = r.sep_class == 0 ? 2 : 0;  // urban exactly when low SEP
  try {
    standardize(f.records);
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("sep_low"), std::string::npos) << msg;
    EXPECT_NE(msg.find("urbanicity_urban"), std::string::npos) << msg;
    EXPECT_NE(msg.find("urbanicity_semi-urban"), std::string::npos) << msg;  // never observed
    EXPECT_EQ(msg.find("ndvi"), std::string::npos) << msg;
  }
}

TEST(Standardize, AlignmentChecksCoverage) {
  SimConfig c;
  c.nx = 3;
  c.ny = 3;
  c.cantons_x = 1;
  c.cantons_y = 1;
  c.years = 1;
  const Simulation sim = simulate(c);
  std::vector<ModifierRecord> shuffled(sim.modifiers.rbegin(), sim.modifiers.rend());
  const auto aligned = align_modifiers(shuffled, 9);
  for (int m = 0; m < 9; ++m) EXPECT_EQ(aligned[static_cast<std::size_t>(m)].area_id, m);
  shuffled.pop_back();
  EXPECT_THROW(align_modifiers(shuffled, 9), InputError);
  shuffled.push_back(shuffled.front());
  EXPECT_THROW(align_modifiers(shuffled, 9), InputError);
}

TEST(MixtureQuantile, SingleAndSymmetricMixtures) {
  EXPECT_NEAR(mixture_quantile({1.0}, {2.0}, 0.975), 1.0 + 2.0 * kZ975, 1e-12);
  EXPECT_NEAR(mixture_quantile({1.0}, {2.0}, 0.5), 1.0, 1e-12);
  EXPECT_NEAR(mixture_quantile({-3.0, 3.0}, {1.0, 1.0}, 0.5), 0.0, 1e-12);
  // P(X <= q) = 0.975 checked directly
  const double q = mixture_quantile({0.0, 2.0}, {1.0, 0.5}, 0.975);
  const double cdf = 0.5 * (0.5 * std::erfc(-q / std::sqrt(2.0)) + 0.5 * std::erfc(-(q - 2.0) / (0.5 * std::sqrt(2.0))));
  EXPECT_NEAR(cdf, 0.975, 1e-13);
  EXPECT_THROW(mixture_quantile({}, {}, 0.5), InputError);
}

TEST(ModifierFit, ConstantOutcomeGivesZeroEffects) {
  const Fixture f = make_fixture();
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(36, 0.8);
  const ModifierFit fit = fit_modifiers(y, f.design.x, f.structure);
  EXPECT_NEAR(fit.mean[0], 0.8, 1e-6);
  for (Eigen::Index j = 1; j < fit.mean.size(); ++j) EXPECT_NEAR(fit.mean[j], 0.0, 1e-6) << j;
}

TEST(ModifierFit, RecoversLinearEffect) {
  int covered = 0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    const Fixture f = make_fixture(6, 6, 10 + static_cast<std::uint64_t>(r));
    const Eigen::VectorXd y = (1.0 + 0.5 * f.design.x.col(0).array()).matrix() + noise(36, 0.2, 100 + static_cast<unsigned>(r));
    const ModifierPosterior p = fit_median_outcome(y, f.design, f.structure);
    const ModifierEffect& e = p.effect("pct_over_85");
    EXPECT_EQ(e.sd_used, f.design.sd[0]);
    if (e.lower <= 0.5 && 0.5 <= e.upper) ++covered;
  }
  EXPECT_GE(covered, 17);
}

TEST(ModifierFit, DroppingCantonEffectInflatesSpatialVariance) {
  const Fixture f = make_fixture();
  Eigen::VectorXd y(36);
  const std::array<double, 4> level = {-1.0, 0.5, 1.5, -0.8};
  for (int m = 0; m < 36; ++m) y[m] = level[static_cast<std::size_t>(f.graph.canton_of[static_cast<std::size_t>(m)])];
  y += noise(36, 0.05, 7);
  ModifierFitOptions with, without;
  without.priors.canton_effect = false;
  const ModifierFit a = fit_modifiers(y, f.design.x, f.structure, with);
  const ModifierFit b = fit_modifiers(y, f.design.x, f.structure, without);
  EXPECT_TRUE(std::isnan(b.sigma_canton));
  EXPECT_GT(b.sigma_spatial, 2.0 * a.sigma_spatial);
}

TEST(ModifierFit, StandardizedCoefficientIsRawTimesSd) {
  const Fixture f = make_fixture();
  Eigen::MatrixXd raw = f.design.x;
  for (int j = 0; j < 4; ++j) raw.col(j) = raw.col(j).array() * f.design.sd[static_cast<std::size_t>(j)] + f.design.mean[static_cast<std::size_t>(j)];
  const Eigen::VectorXd y = (0.3 * f.design.x.col(1) - 0.2 * f.design.x.col(3)) + noise(36, 0.1, 9);
  ModifierPriors pr;
  pr.fixed_variance = 1e12;
  pr.intercept_variance = 1e12;
  const ModifierModel ms(y, f.design.x, f.structure, pr), mr(y, raw, f.structure, pr);
  const LaplaceEngine<ModifierModel> es(ms), er(mr);
  LaplaceWorkspace ws = es.make_workspace(), wr = er.make_workspace();
  Eigen::VectorXd theta(4);
  theta << std::log(0.1), std::log(0.05), 0.0, std::log(0.05);
  const Eigen::VectorXd xs = es.conditional_mode(theta, ws).x;
  const Eigen::VectorXd xr = er.conditional_mode(theta, wr).x;
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(xs[1 + j], xr[1 + j] * f.design.sd[static_cast<std::size_t>(j)], 1e-8) << j;
  for (int j = 4; j < 10; ++j) EXPECT_NEAR(xs[1 + j], xr[1 + j], 1e-8) << j;
}

TEST(ModifierFit, PermutingAreasLeavesPosteriorUnchanged) {
  const Fixture f = make_fixture();
  const Eigen::VectorXd y = (1.0 + 0.4 * f.design.x.col(2).array()).matrix() + noise(36, 0.2, 11);
  const ModifierFit a = fit_modifiers(y, f.design.x, f.structure);

  std::vector<int> perm(36);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), Rng(5));  // new id of old area m is perm[m]
  std::vector<std::pair<int, int>> edges;
  for (auto [u, v] : f.graph.edges) edges.emplace_back(perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]);
  std::vector<int> canton(36);
  Eigen::VectorXd yp(36);
  Eigen::MatrixXd xp(36, f.design.cols());
  for (int m = 0; m < 36; ++m) {
    const int k = perm[static_cast<std::size_t>(m)];
    canton[static_cast<std::size_t>(k)] = f.graph.canton_of[static_cast<std::size_t>(m)];
    yp[k] = y[m];
    xp.row(k) = f.design.x.row(m);
  }
  const ScaledStructure sp = bym2_scaling(build_graph(36, edges, canton));
  const ModifierFit b = fit_modifiers(yp, xp, sp);
  for (Eigen::Index j = 0; j < a.mean.size(); ++j) {
    EXPECT_NEAR(a.mean[j], b.mean[j], 1e-3 * a.sd[j]) << j;
    EXPECT_NEAR(a.sd[j], b.sd[j], 1e-3 * a.sd[j]) << j;
  }
}

TEST(Propagation, IdenticalSamplesReproduceSingleFit) {
  const Fixture f = make_fixture();
  const Eigen::VectorXd y = (1.0 + 0.3 * f.design.x.col(0).array()).matrix() + noise(36, 0.2, 13);
  const ModifierPosterior single = fit_median_outcome(y, f.design, f.structure);
  const ModifierPosterior pooled = propagate(y.replicate(1, 5), f.design, f.structure);
  EXPECT_EQ(pooled.samples, 5);
  EXPECT_EQ(pooled.failures, 0);
  ASSERT_EQ(pooled.effects.size(), single.effects.size());
  for (std::size_t j = 0; j < single.effects.size(); ++j) {
    EXPECT_NEAR(pooled.effects[j].median, single.effects[j].median, 1e-12);
    EXPECT_NEAR(pooled.effects[j].lower, single.effects[j].lower, 1e-12);
    EXPECT_NEAR(pooled.effects[j].upper, single.effects[j].upper, 1e-12);
  }
}

TEST(Propagation, PooledMeanIsMeanOfFitMeansAndIntervalsWiden) {
  const Fixture f = make_fixture();
  const Eigen::VectorXd centre = (1.0 + 0.3 * f.design.x.col(0).array()).matrix() + noise(36, 0.1, 17);
  Eigen::MatrixXd draws(36, 40);
  for (int s = 0; s < 40; ++s) draws.col(s) = centre + noise(36, 0.3, 1000 + static_cast<unsigned>(s));
  const ModifierPosterior pooled = propagate(draws, f.design, f.structure);
  const ModifierPosterior single = fit_median_outcome(centre, f.design, f.structure);
  ASSERT_EQ(pooled.fits.size(), 40u);
  for (std::size_t j = 0; j < pooled.effects.size(); ++j) {
    double m = 0.0;
    for (const auto& fit : pooled.fits) m += fit.mean[static_cast<Eigen::Index>(j)] / 40.0;
    EXPECT_NEAR(pooled.effects[j].mean, m, 1e-14);
    EXPECT_GT(pooled.effects[j].upper - pooled.effects[j].lower, single.effects[j].upper - single.effects[j].lower) << j;
  }
}

TEST(Propagation, FailedSamplesAreRecorded) {
  const Fixture f = make_fixture();
  Eigen::MatrixXd draws(36, 4);
  for (int s = 0; s < 4; ++s) draws.col(s) = Eigen::VectorXd::Ones(36) + noise(36, 0.2, 30 + static_cast<unsigned>(s));
  draws(3, 2) = std::numeric_limits<double>::quiet_NaN();
  const ModifierPosterior p = propagate(draws, f.design, f.structure);
  EXPECT_EQ(p.failures, 1);
  EXPECT_EQ(p.fits.size(), 3u);
  ASSERT_EQ(p.failure_messages.size(), 1u);
  EXPECT_NE(p.failure_messages[0].find("sample 2"), std::string::npos);
  EXPECT_THROW(propagate(draws.leftCols(1), f.design, f.structure), InputError);
}

TEST(Propagation, OutcomeSamplesAndEffectsTable) {
  std::vector<AreaMetrics> areas(2);
  for (int m = 0; m < 2; ++m)
    for (int k = 0; k < 10; ++k) areas[static_cast<std::size_t>(m)].erh.push_back(10.0 * m + k);
  const Eigen::MatrixXd s = erh_outcome_samples(areas, 5);
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 4), 8.0);
  EXPECT_EQ(s(1, 1), 12.0);
  EXPECT_THROW(erh_outcome_samples(areas, 11), InputError);

  const Fixture f = make_fixture();
  const ModifierPosterior p = fit_median_outcome(Eigen::VectorXd::Ones(36) + noise(36, 0.2, 40), f.design, f.structure);
  const auto path = std::filesystem::temp_directory_path() / "heatsvc_modifier_effects.csv";
  write_modifier_effects(path, {&p});
  const csv::Table t = csv::read(path);
  EXPECT_EQ(t.rows.size(), 11u);
  EXPECT_EQ(t.get(1, t.column("variable")), "pct_over_85");
  EXPECT_EQ(t.get(1, t.column("mode")), "median");
  EXPECT_EQ(t.get(0, t.column("sd_used")), "");
  std::filesystem::remove(path);
}
