#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "heatsvc/error.hpp"

namespace heatsvc {

using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Rng = std::mt19937_64;

inline Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = z(rng);
  return v;
}

/// Factorization of a Gaussian precision restricted to the null space of a
/// set of linear constraints {x : A x = 0}.
///
/// The precision M may be singular (intrinsic priors) as long as it is
/// positive definite on the constraint subspace. Internally M is made
/// positive definite by adding a few diagonal "pins"; the pins are then
/// removed again with exact low-rank corrections, and the constraints are
/// imposed by conditioning by kriging. With C the covariance on the
/// subspace:
///   solve(b)   = C b          (constrained minimizer of x'Mx/2 - b'x)
///   log_det()  = log det(B'MB) + log det(AA')   for B an orthonormal basis of null(A)
///   sample()   ~ N(0, C)
/// Only the lower triangle of M is read.
class ConstrainedFactor {
 public:
  using Index = Eigen::Index;

  /// Symbolic analysis; `lower_pattern` must contain every entry any later
  /// matrix will have, including the diagonal.
  void analyze(const SpMat& lower_pattern) {
    llt_->analyzePattern(lower_pattern);
    analyzed_ = true;
  }

  void factorize(const SpMat& lower, const Eigen::MatrixXd& constraints, std::span<const Index> pins) {
    if (!analyzed_) analyze(lower);
    m_ = lower;
    const Index p = m_.rows();
    SpMat pinned = m_;
    pin_idx_.assign(pins.begin(), pins.end());
    pin_w_.resize(static_cast<Index>(pin_idx_.size()));
    for (std::size_t k = 0; k < pin_idx_.size(); ++k) {
      const Index i = pin_idx_[k];
      double& d = pinned.coeffRef(i, i);
      const double w = std::max(std::abs(d), 1e-6);
      pin_w_[static_cast<Index>(k)] = w;
      d += w;
    }
    llt_->factorize(pinned);
    if (llt_->info() != Eigen::Success) throw NumericError("sparse Cholesky factorization failed (matrix not positive definite after pinning)");

    log_det_ = 2.0 * llt_->matrixL().nestedExpression().diagonal().array().log().sum();
    if (!std::isfinite(log_det_)) throw NumericError("non-finite log determinant in Cholesky factor");

    a_ = constraints;
    const Index k = a_.rows();
    if (k > 0) {
      if (a_.cols() != p) throw InputError("constraint matrix has wrong number of columns");
      s_a_ = llt_->solve(Eigen::MatrixXd(a_.transpose()));
      Eigen::MatrixXd asa = a_ * s_a_;
      asa_llt_.compute(asa);
      if (asa_llt_.info() != Eigen::Success) throw NumericError("constraints are linearly dependent");
      log_det_ += 2.0 * Eigen::MatrixXd(asa_llt_.matrixL()).diagonal().array().log().sum();
    } else {
      s_a_.resize(p, 0);
    }

    const Index e = static_cast<Index>(pin_idx_.size());
    if (e > 0) {
      Eigen::MatrixXd et = Eigen::MatrixXd::Zero(p, e);
      for (Index j = 0; j < e; ++j) et(pin_idx_[static_cast<std::size_t>(j)], j) = std::sqrt(pin_w_[j]);
      g_ = llt_->solve(et);
      if (k > 0) g_ -= s_a_ * asa_llt_.solve(a_ * g_);
      Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(e, e);
      for (Index j = 0; j < e; ++j) inner.row(j) -= std::sqrt(pin_w_[j]) * g_.row(pin_idx_[static_cast<std::size_t>(j)]);
      inner = 0.5 * (inner + inner.transpose());
      k_llt_.compute(inner);
      if (k_llt_.info() != Eigen::Success)
        throw NumericError("precision is not positive definite on the constraint subspace");
      log_det_ += 2.0 * Eigen::MatrixXd(k_llt_.matrixL()).diagonal().array().log().sum();
    } else {
      g_.resize(p, 0);
    }
  }

  Index size() const { return m_.rows(); }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd x = llt_->solve(b);
    project(x);
    if (g_.cols() > 0) x += g_ * k_llt_.solve(g_.transpose() * b);
    return x;
  }

  /// Draw from N(0, C).
  Eigen::VectorXd sample(Rng& rng) const {
    Eigen::VectorXd xi = standard_normal(rng, m_.rows());
    Eigen::VectorXd w = llt_->matrixU().solve(xi);
    Eigen::VectorXd z = llt_->permutationPinv() * w;
    project(z);
    if (g_.cols() > 0) {
      Eigen::VectorXd xi2 = standard_normal(rng, g_.cols());
      z += g_ * k_llt_.matrixU().solve(xi2);
    }
    return z;
  }

  double log_det() const { return log_det_; }

  /// v' M v with the original (unpinned) matrix.
  double quad(const Eigen::VectorXd& v) const { return v.dot(m_.selfadjointView<Eigen::Lower>() * v); }

  Eigen::VectorXd multiply(const Eigen::VectorXd& v) const { return m_.selfadjointView<Eigen::Lower>() * v; }

  /// diag(C) by p solves; intended for small problems and tests.
  Eigen::VectorXd marginal_variances() const {
    const Index p = m_.rows();
    Eigen::VectorXd out(p);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
    for (Index i = 0; i < p; ++i) {
      e[i] = 1.0;
      out[i] = solve(e)[i];
      e[i] = 0.0;
    }
    return out;
  }

  /// Selected columns of C.
  Eigen::MatrixXd covariance_columns(std::span<const Index> cols) const {
    Eigen::MatrixXd out(m_.rows(), static_cast<Index>(cols.size()));
    Eigen::VectorXd e = Eigen::VectorXd::Zero(m_.rows());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      e[cols[j]] = 1.0;
      out.col(static_cast<Index>(j)) = solve(e);
      e[cols[j]] = 0.0;
    }
    return out;
  }

  const Eigen::MatrixXd& constraints() const { return a_; }

 private:
  void project(Eigen::VectorXd& x) const {
    if (a_.rows() > 0) x -= s_a_ * asa_llt_.solve(a_ * x);
  }

  using Llt = Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>>;
  std::unique_ptr<Llt> llt_ = std::make_unique<Llt>();
  bool analyzed_ = false;
  SpMat m_;
  Eigen::MatrixXd a_;
  Eigen::MatrixXd s_a_;
  Eigen::LLT<Eigen::MatrixXd> asa_llt_;
  std::vector<Index> pin_idx_;
  Eigen::VectorXd pin_w_;
  Eigen::MatrixXd g_;
  Eigen::LLT<Eigen::MatrixXd> k_llt_;
  double log_det_ = 0.0;
};

/// Lower-triangular sparse matrix from (row, col, value) triplets; entries in
/// the upper triangle are mirrored, duplicates summed, explicit zeros kept.
inline SpMat lower_from_triplets(Eigen::Index n, const std::vector<Eigen::Triplet<double>>& trips) {
  std::vector<Eigen::Triplet<double>> low;
  low.reserve(trips.size());
  for (const auto& t : trips) {
    if (t.row() >= t.col())
      low.push_back(t);
    else
      low.emplace_back(t.col(), t.row(), t.value());
  }
  SpMat m(n, n);
  m.setFromTriplets(low.begin(), low.end());
  return m;
}

}  // namespace heatsvc
