#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "heatsvc/spline.hpp"
#include "spline_oracle.hpp"

using namespace heatsvc;

namespace {

SplineBasis toy_basis() {
  std::vector<double> xs(101);
  std::iota(xs.begin(), xs.end(), 0.0);
  return SplineBasis(knots_from_quantiles(xs), 12.0);
}

std::vector<double> knot_vector(const SplineBasis& b) {
  const auto& k = b.knots();
  return {k.boundary[0], k.interior[0], k.interior[1], k.interior[2], k.boundary[1]};
}

}  // namespace

TEST(Quantiles, UniformGridGivesPercentileKnots) {
  std::vector<double> xs(101);
  std::iota(xs.begin(), xs.end(), 0.0);
  const KnotSet k = knots_from_quantiles(xs);
  EXPECT_DOUBLE_EQ(k.interior[0], 10.0);
  EXPECT_DOUBLE_EQ(k.interior[1], 75.0);
  EXPECT_DOUBLE_EQ(k.interior[2], 90.0);
  EXPECT_DOUBLE_EQ(k.boundary[0], 0.0);
  EXPECT_DOUBLE_EQ(k.boundary[1], 100.0);
}

TEST(Quantiles, Type7Interpolation) {
  const std::vector<double> v = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(percentile_of(v, 1.75), 25.0);
  EXPECT_DOUBLE_EQ(percentile_of(v, 2.5), 50.0);
}

TEST(Quantiles, DegenerateExposuresRejected) {
  EXPECT_THROW(knots_from_quantiles(std::vector<double>(50, 12.0)), InputError);
  EXPECT_THROW(knots_from_quantiles({1, 2, 3}), InputError);
}

TEST(Spline, ZeroAtLowerBoundaryAndCenteredAtReference) {
  const SplineBasis b = toy_basis();
  EXPECT_EQ(b.evaluate(b.lower(), false), SplineBasis::Row::Zero());
  EXPECT_EQ(b.evaluate(12.0, true), SplineBasis::Row::Zero());
}

TEST(Spline, MatchesSecondDerivativeOracle) {
  const SplineBasis b = toy_basis();
  const auto t = knot_vector(b);
  for (double x : {-5.0, 0.0, 3.3, 10.0, 20.0, 50.0, 75.0, 82.5, 90.0, 99.0, 100.0, 120.0}) {
    const auto row = b.evaluate(x, false);
    const auto ref = oracle::cardinal_row(t, x);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(row[j], ref[static_cast<std::size_t>(j)], 1e-10) << "x=" << x << " col " << j;
  }
}

TEST(Spline, CenteringIdentity) {
  const SplineBasis b = toy_basis();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 110);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng);
    EXPECT_LT((b.evaluate(x, true) + b.center_row() - b.evaluate(x, false)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Spline, LinearBeyondBoundaries) {
  const SplineBasis b = toy_basis();
  for (double x0 : {-30.0, 101.0, 150.0}) {
    const double h = 1.5;
    const SplineBasis::Row second = b.evaluate(x0 + h, false) - 2.0 * b.evaluate(x0, false) + b.evaluate(x0 - h, false);
    if (x0 - h >= b.upper() || x0 + h <= b.lower()) {
      EXPECT_LT(second.cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Spline, ContinuousDerivativesAtKnots) {
  const SplineBasis b = toy_basis();
  const auto t = knot_vector(b);
  const double h = 1e-4;
  for (int k = 1; k <= 3; ++k) {
    const double x = t[static_cast<std::size_t>(k)];
    const SplineBasis::Row left_d1 = (b.evaluate(x, false) - b.evaluate(x - h, false)) / h;
    const SplineBasis::Row right_d1 = (b.evaluate(x + h, false) - b.evaluate(x, false)) / h;
    EXPECT_LT((left_d1 - right_d1).cwiseAbs().maxCoeff(), 1e-5);
    const SplineBasis::Row left_d2 = (b.evaluate(x, false) - 2 * b.evaluate(x - h, false) + b.evaluate(x - 2 * h, false)) / (h * h);
    const SplineBasis::Row right_d2 = (b.evaluate(x + 2 * h, false) - 2 * b.evaluate(x + h, false) + b.evaluate(x, false)) / (h * h);
    EXPECT_LT((left_d2 - right_d2).cwiseAbs().maxCoeff(), 1e-2);
  }
}

TEST(Spline, NonFiniteRejected) {
  const SplineBasis b = toy_basis();
  EXPECT_THROW(b.evaluate(std::nan(""), false), InputError);
}

TEST(Grid, EndpointsAndStep) {
  const auto g = evaluation_grid(0.0, 199.0);
  ASSERT_EQ(g.size(), 200u);
  EXPECT_DOUBLE_EQ(g[1] - g[0], 1.0);
  const auto s = evaluation_grid(-6.81, 29.48);
  EXPECT_EQ(s.front(), -6.81);
  EXPECT_EQ(s.back(), 29.48);
  EXPECT_THROW(evaluation_grid(3.0, 3.0), InputError);
}
