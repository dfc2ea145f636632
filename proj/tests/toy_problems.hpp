#pragma once

// Small latent Gaussian problems with closed-form answers, for exercising
// the inference engine.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "heatsvc/laplace.hpp"

namespace toy {

using heatsvc::RowSpMat;
using heatsvc::Triplets;

/// x ~ N(0, (exp(theta) R + ridge I)^-1) on {Ax = 0};  y = design x + off + e,
/// e ~ N(0, 1/tau_y). Hyperprior on theta: N(0, 2^2).
struct GaussianToy {
  RowSpMat phi;
  Eigen::VectorXd y, off;
  Eigen::MatrixXd r;      // structure, PSD
  double ridge = 0.0;
  double tau_y = 1.0;
  Eigen::MatrixXd a;      // constraints
  std::vector<Eigen::Index> pin_list;
  double prior_shift = 0.0;

  Eigen::Index latent_dim() const { return r.rows(); }
  Eigen::Index hyper_dim() const { return 1; }
  const RowSpMat& design() const { return phi; }
  const Eigen::VectorXd& offsets() const { return off; }
  const Eigen::MatrixXd& constraints() const { return a; }
  const std::vector<Eigen::Index>& pins() const { return pin_list; }
  bool constant_curvature() const { return true; }

  Eigen::MatrixXd precision(const Eigen::VectorXd& th) const {
    return std::exp(th[0]) * r + ridge * Eigen::MatrixXd::Identity(r.rows(), r.cols());
  }

  void prior_triplets(const Eigen::VectorXd& th, Triplets& t) const {
    const Eigen::MatrixXd q = precision(th);
    for (Eigen::Index c = 0; c < q.cols(); ++c)
      for (Eigen::Index rr = c; rr < q.rows(); ++rr)
        if (r(rr, c) != 0.0 || rr == c) t.emplace_back(static_cast<int>(rr), static_cast<int>(c), q(rr, c));
  }

  double loglik(const Eigen::VectorXd& e, const Eigen::VectorXd&, Eigen::VectorXd* g, Eigen::VectorXd* c) const {
    const Eigen::VectorXd res = y - e;
    if (g) *g = tau_y * res;
    if (c) *c = Eigen::VectorXd::Constant(y.size(), tau_y);
    return -0.5 * tau_y * res.squaredNorm() + 0.5 * y.size() * (std::log(tau_y) - std::log(2 * std::numbers::pi));
  }

  double log_hyperprior(const Eigen::VectorXd& th) const {
    return -0.5 * th[0] * th[0] / 4.0 - std::log(2.0 * std::sqrt(2 * std::numbers::pi)) + prior_shift;
  }

  Eigen::VectorXd initial_latent() const { return Eigen::VectorXd::Zero(r.rows()); }
  Eigen::VectorXd initial_hyper() const { return Eigen::VectorXd::Zero(1); }

  /// Exact log p(y | theta) by marginalizing x.
  double exact_log_evidence(const Eigen::VectorXd& th) const {
    Eigen::MatrixXd basis;
    if (a.rows() == 0) {
      basis = Eigen::MatrixXd::Identity(r.rows(), r.rows());
    } else {
      Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
      Eigen::MatrixXd k = lu.kernel();
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(k);
      basis = qr.householderQ() * Eigen::MatrixXd::Identity(k.rows(), k.cols());
    }
    const Eigen::MatrixXd cov_x = basis * (basis.transpose() * precision(th) * basis).inverse() * basis.transpose();
    const Eigen::MatrixXd dphi = Eigen::MatrixXd(phi);
    const Eigen::MatrixXd s = dphi * cov_x * dphi.transpose() + Eigen::MatrixXd::Identity(y.size(), y.size()) / tau_y;
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    const Eigen::VectorXd res = y - off;
    const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return -0.5 * res.dot(llt.solve(res)) - 0.5 * logdet - 0.5 * y.size() * std::log(2 * std::numbers::pi);
  }
};

/// RW1 structure on m points (rank m - 1) with a sum-to-zero constraint,
/// plus a free intercept with precision 1e-4, observed with noise.
inline GaussianToy rw1_toy(int m, int reps, unsigned seed) {
  GaussianToy t;
  const int p = m + 1;
  t.r = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i + 1 < m; ++i) {
    t.r(1 + i, 1 + i) += 1;
    t.r(2 + i, 2 + i) += 1;
    t.r(1 + i, 2 + i) -= 1;
    t.r(2 + i, 1 + i) -= 1;
  }
  t.ridge = 0.0;
  t.r(0, 0) = 0.0;
  // fixed intercept precision enters through a tiny ridge on entry 0 only
  t.r(0, 0) = 1e-4;  // scaled by exp(theta) as well; fine for the oracle
  t.a = Eigen::MatrixXd::Zero(1, p);
  t.a.block(0, 1, 1, m).setOnes();
  t.pin_list = {1};
  t.tau_y = 4.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Triplets trip;
  const int n = m * reps;
  t.y.resize(n);
  t.off = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    const int i = k % m;
    trip.emplace_back(k, 0, 1.0);
    trip.emplace_back(k, 1 + i, 1.0);
    t.y[k] = 2.0 + std::sin(6.0 * i / m) + 0.5 * z(rng);
  }
  t.phi.resize(n, p);
  t.phi.setFromTriplets(trip.begin(), trip.end());
  return t;
}

/// Poisson counts with an IID random effect per group and a fixed slope.
struct PoissonToy {
  RowSpMat phi;
  Eigen::VectorXd y, off;
  int groups = 0;
  Eigen::MatrixXd a = Eigen::MatrixXd(0, 0);
  std::vector<Eigen::Index> pin_list;

  Eigen::Index latent_dim() const { return 2 + groups; }
  Eigen::Index hyper_dim() const { return 1; }
  const RowSpMat& design() const { return phi; }
  const Eigen::VectorXd& offsets() const { return off; }
  const Eigen::MatrixXd& constraints() const { return a; }
  const std::vector<Eigen::Index>& pins() const { return pin_list; }
  bool constant_curvature() const { return false; }

  void prior_triplets(const Eigen::VectorXd& th, Triplets& t) const {
    t.emplace_back(0, 0, 1e-4);
    t.emplace_back(1, 1, 1e-3);
    for (int g = 0; g < groups; ++g) t.emplace_back(2 + g, 2 + g, std::exp(-2.0 * th[0]));
  }

  double loglik(const Eigen::VectorXd& e, const Eigen::VectorXd&, Eigen::VectorXd* g, Eigen::VectorXd* c) const {
    double s = 0.0;
    if (g) g->resize(e.size());
    if (c) c->resize(e.size());
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      const double mu = std::exp(e[i]);
      s += y[i] * e[i] - mu - std::lgamma(y[i] + 1);
      if (g) (*g)[i] = y[i] - mu;
      if (c) (*c)[i] = mu;
    }
    return s;
  }

  double log_hyperprior(const Eigen::VectorXd& th) const {
    const double sigma = std::exp(th[0]);
    const double lambda = -std::log(0.01);
    return std::log(lambda) - lambda * sigma + th[0];
  }

  Eigen::VectorXd initial_latent() const { return Eigen::VectorXd::Zero(latent_dim()); }
  Eigen::VectorXd initial_hyper() const { return Eigen::VectorXd::Constant(1, std::log(0.3)); }
};

inline PoissonToy poisson_toy(int groups, int per_group, double sigma, unsigned seed, double log_pop = 3.0) {
  PoissonToy t;
  t.groups = groups;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd effect(groups);
  for (int g = 0; g < groups; ++g) effect[g] = sigma * z(rng);
  const int n = groups * per_group;
  t.y.resize(n);
  t.off = Eigen::VectorXd::Constant(n, log_pop);
  Triplets trip;
  for (int k = 0; k < n; ++k) {
    const int g = k / per_group;
    const double x = u(rng);
    trip.emplace_back(k, 0, 1.0);
    trip.emplace_back(k, 1, x);
    trip.emplace_back(k, 2 + g, 1.0);
    std::poisson_distribution<int> pois(std::exp(log_pop - 1.0 + 0.5 * x + effect[g]));
    t.y[k] = pois(rng);
  }
  t.phi.resize(n, 2 + groups);
  t.phi.setFromTriplets(trip.begin(), trip.end());
  return t;
}

}  // namespace toy
