#include <gtest/gtest.h>

#include "dense_oracle.hpp"
#include "heatsvc/gmrf.hpp"
#include "heatsvc/graph.hpp"

using namespace heatsvc;

namespace {

// RW1-like singular precision on 6 nodes plus a proper IID block of 2
struct Fixture {
  Eigen::MatrixXd q;
  Eigen::MatrixXd a;
  std::vector<Eigen::Index> pins;

  Fixture() {
    q = Eigen::MatrixXd::Zero(8, 8);
    std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 2}};
    q.topLeftCorner(6, 6) = 2.0 * oracle::laplacian(6, edges);
    q(6, 6) = 3.0;
    q(7, 7) = 0.5;
    q(6, 7) = q(7, 6) = 0.4;
    a = Eigen::MatrixXd::Zero(1, 8);
    a.block(0, 0, 1, 6).setOnes();
    pins = {0};
  }

  SpMat lower() const { return SpMat(SpMat(q.sparseView()).triangularView<Eigen::Lower>()); }
};

}  // namespace

TEST(ConstrainedFactor, LogDetMatchesNullSpaceOracle) {
  Fixture f;
  ConstrainedFactor cf;
  cf.factorize(f.lower(), f.a, f.pins);
  const auto [quad, logdet] = oracle::constrained_quad_logdet(f.q, f.a, Eigen::VectorXd::Zero(8));
  // log det(AA') = log 6 is included by construction
  EXPECT_NEAR(cf.log_det(), logdet + std::log(6.0), 1e-9);
}

TEST(ConstrainedFactor, SolveIsConstrainedMinimizer) {
  Fixture f;
  ConstrainedFactor cf;
  cf.factorize(f.lower(), f.a, f.pins);
  Eigen::VectorXd b(8);
  b << 1, -2, 0.5, 3, -1, 0.2, 1, -1;
  const Eigen::VectorXd x = cf.solve(b);
  EXPECT_LT(std::abs((f.a * x)(0)), 1e-12);
  // KKT: Qx - b lies in the row space of A
  const Eigen::VectorXd r = f.q * x - b;
  const Eigen::VectorXd proj = r - f.a.transpose() * (f.a * f.a.transpose()).ldlt().solve(f.a * r);
  EXPECT_LT(proj.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ConstrainedFactor, SampleCovarianceMatchesMarginalVariances) {
  Fixture f;
  ConstrainedFactor cf;
  cf.factorize(f.lower(), f.a, f.pins);
  const Eigen::VectorXd var = cf.marginal_variances();
  Rng rng(17);
  const int n = 20000;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(8);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd z = cf.sample(rng);
    EXPECT_LT(std::abs((f.a * z)(0)), 1e-10);
    ss += z.cwiseAbs2();
  }
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(ss[i] / n, var[i], 0.05 * var[i]);
}

TEST(ConstrainedFactor, CovarianceIsGeneralizedInverseOnSubspace) {
  Fixture f;
  ConstrainedFactor cf;
  cf.factorize(f.lower(), f.a, f.pins);
  std::vector<Eigen::Index> cols(8);
  for (int i = 0; i < 8; ++i) cols[static_cast<std::size_t>(i)] = i;
  const Eigen::MatrixXd c = cf.covariance_columns(cols);
  Eigen::MatrixXd ref = oracle::pinv_sym(f.q);  // the constraint spans the null space here
  EXPECT_LT((c - ref).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ConstrainedFactor, NoConstraintsNoPins) {
  Eigen::MatrixXd q(2, 2);
  q << 2, 0.5, 0.5, 1;
  ConstrainedFactor cf;
  cf.factorize(SpMat(SpMat(q.sparseView()).triangularView<Eigen::Lower>()), Eigen::MatrixXd(0, 2), {});
  EXPECT_NEAR(cf.log_det(), std::log(q.determinant()), 1e-12);
  EXPECT_LT((cf.solve(Eigen::Vector2d(1, 1)) - q.inverse() * Eigen::Vector2d(1, 1)).norm(), 1e-12);
}

TEST(ConstrainedFactor, SingularOnSubspaceThrows) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(3, 3);
  q(0, 0) = 1;
  ConstrainedFactor cf;
  std::vector<Eigen::Index> pins = {1, 2};
  EXPECT_THROW(cf.factorize(SpMat(q.sparseView()), Eigen::MatrixXd(0, 3), pins), NumericError);
}
