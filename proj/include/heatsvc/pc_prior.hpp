#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "heatsvc/error.hpp"

namespace heatsvc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Tail statement Pr(param > U) = alpha (standard deviations) or
/// Pr(param < U) = alpha (mixing parameters).
struct PcPair {
  double u = 1.0;
  double alpha = 0.01;

  void validate(const char* what) const {
    if (!(u > 0.0) || !(alpha > 0.0 && alpha < 1.0))
      throw InputError(std::string("invalid PC prior for ") + what + ": need U > 0 and 0 < alpha < 1");
  }
};

/// Rate of the exponential PC prior on a standard deviation.
inline double pc_sd_rate(double u, double alpha) { return -std::log(alpha) / u; }

/// log density of the PC prior on a standard deviation: ln(lambda) - lambda*sigma.
inline double pc_sd_logdensity(double sigma, double u, double alpha) {
  if (!(sigma > 0.0)) return kNegInf;
  const double lambda = pc_sd_rate(u, alpha);
  return std::log(lambda) - lambda * sigma;
}

/// PC prior for the BYM2 mixing parameter phi.
///
/// The distance to the base model (phi = 0, unstructured only) is
/// d(phi) = sqrt(2 KLD(phi)) with
///   KLD(phi) = 1/2 sum_i [ phi (g_i - 1) - log(1 + phi (g_i - 1)) ]
/// where g_i are the non-zero eigenvalues of the scaled structure's
/// generalized inverse (directions removed by the sum-to-zero constraints
/// do not enter). d is finite on [0, 1], so the exponential density in d is
/// truncated to [0, d(1)] and renormalized; its rate solves
/// Pr(phi < U) = alpha exactly.
class PcPhiPrior {
 public:
  PcPhiPrior() = default;

  PcPhiPrior(std::vector<double> eigenvalues, double u = 0.5, double alpha = 0.5) : u_(u), alpha_(alpha) {
    if (!(u > 0.0 && u < 1.0) || !(alpha > 0.0 && alpha < 1.0))
      throw InputError("invalid PC prior for phi: need 0 < U < 1 and 0 < alpha < 1");
    c_.reserve(eigenvalues.size());
    for (double g : eigenvalues) {
      if (!(g > 0.0)) continue;
      const double c = g - 1.0;
      if (c != 0.0) c_.push_back(c);
    }
    if (c_.empty()) return;  // no structured component: flat prior on [0, 1]
    d_max_ = distance(1.0);
    const double du = distance(u_);
    auto excess = [&](double s) { return truncated_cdf(s / d_max_, du) - alpha_; };
    std::uintmax_t iters = 200;
    auto [lo, hi] = boost::math::tools::toms748_solve(excess, -700.0, 700.0, boost::math::tools::eps_tolerance<double>(52), iters);
    rate_ = 0.5 * (lo + hi) / d_max_;
  }

  bool flat() const { return c_.empty(); }
  double rate() const { return rate_; }
  double max_distance() const { return d_max_; }

  double kld(double phi) const {
    double s = 0.0;
    for (double c : c_) s += x_minus_log1p(phi * c);
    return 0.5 * s;
  }

  double distance(double phi) const { return std::sqrt(2.0 * kld(phi)); }

  /// d'(phi), computed without cancellation near phi = 0.
  double distance_derivative(double phi) const {
    double sum_c2 = 0.0, kp = 0.0;
    for (double c : c_) {
      sum_c2 += c * c;
      kp += c * c / (1.0 + phi * c);
    }
    if (phi <= 0.0) return std::sqrt(0.5 * sum_c2);
    // KLD'(phi) = 1/2 phi sum c^2/(1 + phi c); d' = KLD'/d
    const double d = distance(phi);
    if (d == 0.0) return std::sqrt(0.5 * sum_c2);
    return 0.5 * phi * kp / d;
  }

  double logdensity(double phi) const {
    if (!(phi >= 0.0 && phi <= 1.0)) return kNegInf;
    if (flat()) return 0.0;
    const double d = distance(phi);
    const double s = rate_ * d_max_;
    double log_norm;  // log of the density in d at d, including the truncation
    if (std::abs(s) < 1e-12)
      log_norm = -std::log(d_max_);
    else
      log_norm = std::log(std::abs(rate_)) - rate_ * d - std::log(std::abs(-std::expm1(-s)));
    return log_norm + std::log(distance_derivative(phi));
  }

  /// Pr(phi' < phi), closed form through the distance.
  double cdf(double phi) const {
    if (phi <= 0.0) return 0.0;
    if (phi >= 1.0) return 1.0;
    if (flat()) return phi;
    return truncated_cdf(rate_, distance(phi));
  }

 private:
  static double x_minus_log1p(double x) {
    if (std::abs(x) < 1e-4) return x * x * (0.5 - x * (1.0 / 3.0 - x * 0.25));
    return x - std::log1p(x);
  }

  double truncated_cdf(double rate, double d) const {
    if (std::abs(rate * d_max_) < 1e-12) return d / d_max_;
    return std::expm1(-rate * d) / std::expm1(-rate * d_max_);
  }

  double u_ = 0.5;
  double alpha_ = 0.5;
  std::vector<double> c_;
  double rate_ = 0.0;
  double d_max_ = 0.0;
};

/// Log density of a Gamma(shape, rate) prior on a precision.
inline double loggamma_precision_logdensity(double tau, double shape, double rate) {
  if (!(tau > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(tau) - rate * tau;
}

}  // namespace heatsvc
