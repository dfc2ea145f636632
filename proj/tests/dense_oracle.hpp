#pragma once

// Dense reference computations used by the tests.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

/// Moore-Penrose pseudo-inverse of a symmetric matrix by eigendecomposition.
inline Eigen::MatrixXd pinv_sym(const Eigen::MatrixXd& q, double tol = 1e-9) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  Eigen::VectorXd inv = es.eigenvalues();
  const double top = inv.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < inv.size(); ++i) inv[i] = std::abs(inv[i]) > tol * top ? 1.0 / inv[i] : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline Eigen::MatrixXd laplacian(int n, const std::vector<std::pair<int, int>>& edges) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (auto [a, b] : edges) {
    q(a, b) -= 1;
    q(b, a) -= 1;
    q(a, a) += 1;
    q(b, b) += 1;
  }
  return q;
}

/// Geometric mean of the pinv diagonal of a connected graph's Laplacian.
inline double scaling_factor(const Eigen::MatrixXd& q) {
  const Eigen::MatrixXd p = pinv_sym(q);
  return std::exp(p.diagonal().array().log().mean());
}

/// Random connected graph: spanning tree plus extra edges.
inline std::vector<std::pair<int, int>> random_connected_graph(int n, double extra, std::mt19937_64& rng) {
  std::vector<std::pair<int, int>> e;
  for (int i = 1; i < n; ++i) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    e.emplace_back(pick(rng), i);
  }
  std::uniform_int_distribution<int> any(0, n - 1);
  const int m = static_cast<int>(extra * n);
  for (int k = 0; k < m; ++k) {
    int a = any(rng), b = any(rng);
    if (a == b) continue;
    e.emplace_back(std::min(a, b), std::max(a, b));
  }
  return e;
}

/// Log density of N(0, Sigma) restricted to the subspace {Ax = 0}, where
/// the precision Q is positive definite on that subspace: uses an
/// orthonormal basis B of null(A); returns the quadratic form and the
/// log determinant of B'QB.
inline std::pair<double, double> constrained_quad_logdet(const Eigen::MatrixXd& q, const Eigen::MatrixXd& a, const Eigen::VectorXd& x) {
  Eigen::MatrixXd basis;
  if (a.rows() == 0) {
    basis = Eigen::MatrixXd::Identity(q.rows(), q.rows());
  } else {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    Eigen::MatrixXd k = lu.kernel();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(k);
    basis = qr.householderQ() * Eigen::MatrixXd::Identity(k.rows(), k.cols());
  }
  const Eigen::MatrixXd red = basis.transpose() * q * basis;
  Eigen::LLT<Eigen::MatrixXd> llt(red);
  const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return {x.dot(q * x), logdet};
}

}  // namespace oracle
