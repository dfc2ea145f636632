#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>

#include "heatsvc/graph.hpp"
#include "heatsvc/pc_prior.hpp"

using namespace heatsvc;
using boost::math::quadrature::gauss_kronrod;

namespace {

double sd_tail(double u, double alpha) {
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate([&](double s) { return std::exp(pc_sd_logdensity(s + u, u, alpha)); });
}

PcPhiPrior path_prior() {
  const ScaledStructure s = bym2_scaling(build_graph(3, {{0, 1}, {1, 2}}, {0, 0, 0}));
  return PcPhiPrior(scaled_inverse_eigenvalues(s));
}

}  // namespace

TEST(PcSd, TailProbabilities) {
  EXPECT_NEAR(sd_tail(1.0, 0.01), 0.01, 1e-6);
  EXPECT_NEAR(sd_tail(0.01, 0.01), 0.01, 1e-6);
}

TEST(PcSd, RateAndDomain) {
  EXPECT_NEAR(pc_sd_rate(1.0, 0.01), 4.6052, 1e-4);
  EXPECT_EQ(pc_sd_logdensity(0.0, 1.0, 0.01), kNegInf);
  EXPECT_EQ(pc_sd_logdensity(-1.0, 1.0, 0.01), kNegInf);
}

TEST(PcPhi, MedianAndNormalization) {
  for (int nodes : {3, 12}) {
    std::vector<std::pair<int, int>> e;
    for (int i = 1; i < nodes; ++i) e.emplace_back(i - 1, i);
    const ScaledStructure s = bym2_scaling(build_graph(nodes, e, std::vector<int>(static_cast<std::size_t>(nodes), 0)));
    const PcPhiPrior p(scaled_inverse_eigenvalues(s));
    auto dens = [&](double phi) { return std::exp(p.logdensity(phi)); };
    const double below = gauss_kronrod<double, 61>::integrate(dens, 0.0, 0.5, 15, 1e-12);
    const double total = below + gauss_kronrod<double, 61>::integrate(dens, 0.5, 1.0, 15, 1e-12);
    EXPECT_NEAR(below, 0.5, 1e-4);
    EXPECT_NEAR(total, 1.0, 1e-4);
    EXPECT_NEAR(p.cdf(0.5), 0.5, 1e-12);
  }
}

TEST(PcPhi, DistanceMonotone) {
  const PcPhiPrior p = path_prior();
  double prev = p.distance(0.0);
  EXPECT_EQ(prev, 0.0);
  for (int i = 1; i < 1000; ++i) {
    const double d = p.distance(i / 1000.0);
    EXPECT_GT(d, prev);
    prev = d;
  }
}

TEST(PcPhi, DerivativeMatchesFiniteDifference) {
  const PcPhiPrior p = path_prior();
  for (double phi : {0.05, 0.3, 0.7, 0.95}) {
    const double h = 1e-6;
    EXPECT_NEAR(p.distance_derivative(phi), (p.distance(phi + h) - p.distance(phi - h)) / (2 * h), 1e-5);
  }
}

TEST(PcPhi, OutsideUnitIntervalIsNegInf) {
  const PcPhiPrior p = path_prior();
  EXPECT_EQ(p.logdensity(-0.1), kNegInf);
  EXPECT_EQ(p.logdensity(1.1), kNegInf);
}

TEST(LogGamma, Normalized) {
  const double total = gauss_kronrod<double, 61>::integrate(
      [](double t) { return std::exp(loggamma_precision_logdensity(t, 2.0, 3.0)); }, 0.0, 40.0, 15, 1e-12);
  EXPECT_NEAR(total, 1.0, 1e-8);
}
