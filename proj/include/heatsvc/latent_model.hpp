#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "heatsvc/error.hpp"
#include "heatsvc/gmrf.hpp"
#include "heatsvc/graph.hpp"
#include "heatsvc/ingest.hpp"
#include "heatsvc/laplace.hpp"
#include "heatsvc/pc_prior.hpp"
#include "heatsvc/spline.hpp"

namespace heatsvc {

inline constexpr int kSplineCols = SplineBasis::kColumns;
inline constexpr int kCalendarCols = 7;
inline constexpr int kFixedEffects = 1 + kSplineCols + kCalendarCols;

/// Offsets of the latent blocks, in fixed order:
/// intercept, beta(4), gamma(7), four BYM2 pairs (field, u), the spatial
/// residual pair (field, u), omega (92), delta (T), then the optional
/// interaction blocks xi (T x n) and eta (92 x n).
struct LatentLayout {
  int n_areas = 0;
  int n_years = 0;
  bool interactions = false;

  LatentLayout() = default;
  LatentLayout(int n, int t, bool inter) : n_areas(n), n_years(t), interactions(inter) {}

  static constexpr Eigen::Index intercept() { return 0; }
  static constexpr Eigen::Index beta(int j) { return 1 + j; }
  static constexpr Eigen::Index gamma(int k) { return 1 + kSplineCols + k; }
  /// Field (beta'_j or b) and ICAR component of BYM2 pair `j`; j = 4 is b.
  Eigen::Index field(int j) const { return kFixedEffects + 2 * static_cast<Eigen::Index>(n_areas) * j; }
  Eigen::Index icar(int j) const { return field(j) + n_areas; }
  Eigen::Index omega() const { return field(5); }
  Eigen::Index delta() const { return omega() + kSummerDays; }
  Eigen::Index xi() const { return delta() + n_years; }
  Eigen::Index eta() const { return xi() + (interactions ? static_cast<Eigen::Index>(n_years) * n_areas : 0); }
  Eigen::Index size() const { return eta() + (interactions ? static_cast<Eigen::Index>(kSummerDays) * n_areas : 0); }

  static constexpr int kBym2Pairs = 5;
};

/// Natural-scale hyperparameters.
struct Hyperparameters {
  std::array<double, 4> sigma_beta{0.1, 0.1, 0.1, 0.1};
  std::array<double, 4> phi_beta{0.5, 0.5, 0.5, 0.5};
  double sigma_b = 0.2;
  double phi_b = 0.5;
  double sigma_omega = 0.005;
  double sigma_delta = 0.1;
  double sigma_xi = 0.05;
  double sigma_eta = 0.05;

  void validate() const {
    auto pos = [](double s, const char* w) {
      if (!(s > 0.0) || !std::isfinite(s)) throw InputError(std::string("hyperparameter ") + w + " must be positive");
    };
    auto unit = [](double p, const char* w) {
      if (!(p >= 0.0 && p <= 1.0)) throw InputError(std::string("hyperparameter ") + w + " must lie in [0, 1]");
    };
    for (int j = 0; j < 4; ++j) {
      pos(sigma_beta[static_cast<std::size_t>(j)], "sigma_beta");
      unit(phi_beta[static_cast<std::size_t>(j)], "phi_beta");
    }
    pos(sigma_b, "sigma_b");
    unit(phi_b, "phi_b");
    pos(sigma_omega, "sigma_omega");
    pos(sigma_delta, "sigma_delta");
    pos(sigma_xi, "sigma_xi");
    pos(sigma_eta, "sigma_eta");
  }
};

struct HyperpriorConfig {
  PcPair sd_svc{1.0, 0.01};
  PcPair sd_spatial{1.0, 0.01};
  PcPair sd_year{1.0, 0.01};
  PcPair sd_season{0.01, 0.01};
  PcPair sd_interaction{1.0, 0.01};
  PcPair phi{0.5, 0.5};
  double intercept_variance = 1e6;
  double fixed_variance = 1000.0;

  void validate() const {
    sd_svc.validate("sigma_beta");
    sd_spatial.validate("sigma_b");
    sd_year.validate("sigma_delta");
    sd_season.validate("sigma_omega");
    sd_interaction.validate("interaction sd");
    if (!(phi.u > 0.0 && phi.u < 1.0) || !(phi.alpha > 0.0 && phi.alpha < 1.0))
      throw InputError("invalid PC prior for phi: need 0 < U < 1 and 0 < alpha < 1");
    if (!(intercept_variance > 0.0) || !(fixed_variance > 0.0)) throw InputError("fixed-effect prior variances must be positive");
  }
};

struct ModelConfig {
  double reference_temp = 12.0;
  HyperpriorConfig priors;
  bool interactions = false;
  Hyperparameters init;
};

// internal coordinates: log sigma, logit phi
inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double inv_logit(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
/// 1 - inv_logit(x) without cancellation.
inline double inv_logit_complement(double x) { return inv_logit(-x); }

namespace detail {
/// sum y*e - exp(e) with per-record gradient and curvature; the ln y! term
/// is left to the caller.
inline double poisson_kernel(const Eigen::VectorXd& counts, const Eigen::VectorXd& e, Eigen::VectorXd* grad, Eigen::VectorXd* curv) {
  const Eigen::Index n = counts.size();
  if (e.size() != n) throw InputError("poisson_loglik: length mismatch");
  if (grad) grad->resize(n);
  if (curv) curv->resize(n);
  Eigen::VectorXd term(n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = std::exp(e[i]);
    term[i] = counts[i] * e[i] - mu;
    if (grad) (*grad)[i] = counts[i] - mu;
    if (curv) (*curv)[i] = mu;
  }
  double s = 0.0;  // fixed summation order, independent of thread count
  for (Eigen::Index i = 0; i < n; ++i) s += term[i];
  return s;
}

inline double log_factorial_sum(const Eigen::VectorXd& counts) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < counts.size(); ++i) s += std::lgamma(counts[i] + 1.0);
  return s;
}
}  // namespace detail

/// Log-likelihood of Poisson counts with log link: sum y*e - exp(e) - ln y!
/// with e = offset + eta. Gradient and curvature are per record.
inline double poisson_loglik(const Eigen::VectorXd& counts, const Eigen::VectorXd& offsets, const Eigen::VectorXd& eta,
                             Eigen::VectorXd* grad = nullptr, Eigen::VectorXd* curv = nullptr) {
  if (offsets.size() != counts.size() || eta.size() != counts.size()) throw InputError("poisson_loglik: length mismatch");
  return detail::poisson_kernel(counts, offsets + eta, grad, curv) - detail::log_factorial_sum(counts);
}

/// Second-difference structure D'D of length m.
inline Eigen::MatrixXd rw2_structure(int m) {
  if (m < 3) throw InputError("RW2 needs at least 3 time points");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m - 2, m);
  for (int i = 0; i < m - 2; ++i) {
    d(i, i) = 1.0;
    d(i, i + 1) = -2.0;
    d(i, i + 2) = 1.0;
  }
  return d.transpose() * d;
}

/// Sum-to-zero and zero-linear-trend rows for an RW2 block of length m.
inline Eigen::MatrixXd rw2_constraints(int m) {
  Eigen::MatrixXd a(2, m);
  const double mid = 0.5 * (m - 1);
  for (int i = 0; i < m; ++i) {
    a(0, i) = 1.0;
    a(1, i) = i - mid;
  }
  return a;
}

/// Emits the augmented (field, u) BYM2 precision for one pair in a fixed
/// entry order. tau = 1/sigma^2.
inline void bym2_triplets(const ScaledStructure& s, Eigen::Index field, Eigen::Index icar, double sigma, double phi, Triplets& t) {
  const double tau = 1.0 / (sigma * sigma);
  const double one_minus = 1.0 - phi;
  const int n = s.graph.n_areas;
  const int f = static_cast<int>(field), u = static_cast<int>(icar);
  for (int i = 0; i < n; ++i) {
    if (s.singleton(i)) {
      t.emplace_back(f + i, f + i, tau);
      t.emplace_back(u + i, f + i, 0.0);
      t.emplace_back(u + i, u + i, 1.0);
    } else {
      t.emplace_back(f + i, f + i, tau / one_minus);
      t.emplace_back(u + i, f + i, -std::sqrt(phi * tau) / one_minus);
      t.emplace_back(u + i, u + i, s.scaled.coeff(i, i) + phi / one_minus);
    }
  }
  for (auto [a, b] : s.graph.edges) t.emplace_back(u + b, u + a, s.scaled.coeff(b, a));
}

/// Poisson model with spatially varying spline coefficients:
///   log E[Y] = log P + b0 + X(beta + beta'_m) + Z gamma + omega_d + delta_t + b_m
///              [+ xi_tm + eta_dm]
class SvcPoissonModel {
 public:
  using Index = Eigen::Index;

  SvcPoissonModel(const AnalysisTable& data, const SplineBasis& basis, const ScaledStructure& structure, const ModelConfig& config)
      : structure_(structure), basis_(basis), config_(config) {
    config_.priors.validate();
    config_.init.validate();
    const int n = structure.graph.n_areas;
    if (data.n_areas != n)
      throw InputError("area mismatch: data has " + std::to_string(data.n_areas) + " areas, graph has " + std::to_string(n));
    if (data.size() == 0) throw InputError("analysis table is empty");
    layout_ = LatentLayout(n, data.n_years(), config.interactions);
    phi_prior_ = PcPhiPrior(scaled_inverse_eigenvalues(structure), config_.priors.phi.u, config_.priors.phi.alpha);
    rw2_ = rw2_structure(kSummerDays);

    const Index rows = static_cast<Index>(data.size());
    counts_.resize(rows);
    offsets_.resize(rows);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(rows) * 24);
    double ysum = 0.0, psum = 0.0;
    for (Index r = 0; r < rows; ++r) {
      const auto i = static_cast<std::size_t>(r);
      const int m = data.area[i];
      if (m < 0 || m >= n) throw InputError("analysis table area id " + std::to_string(m) + " not in graph");
      if (data.population[i] <= 0.0) throw InputError("analysis table row with non-positive population");
      if (data.deaths[i] < 0) throw InputError("negative death count in analysis table");
      const double x = data.exposure[i];
      if (!(x >= basis.lower() && x <= basis.upper()))
        throw InputError("exposure " + std::to_string(x) + " on " + data.date[i].iso() + " in area " + std::to_string(m) +
                         " lies outside the basis domain");
      counts_[r] = data.deaths[i];
      offsets_[r] = std::log(data.population[i]);
      ysum += data.deaths[i];
      psum += data.population[i];
      const SplineBasis::Row xc = basis.evaluate(x, true);
      const int ri = static_cast<int>(r);
      trips.emplace_back(ri, 0, 1.0);
      for (int j = 0; j < kSplineCols; ++j) trips.emplace_back(ri, static_cast<int>(LatentLayout::beta(j)), xc[j]);
      for (int k = 0; k < kCalendarCols; ++k) {
        const double z = data.calendar[i].value(k);
        if (z != 0.0) trips.emplace_back(ri, static_cast<int>(LatentLayout::gamma(k)), z);
      }
      for (int j = 0; j < kSplineCols; ++j) trips.emplace_back(ri, static_cast<int>(layout_.field(j) + m), xc[j]);
      trips.emplace_back(ri, static_cast<int>(layout_.field(4) + m), 1.0);
      const int d = data.day_index[i], t = data.year_index[i];
      if (d < 0 || d >= kSummerDays) throw InputError("day index out of range in analysis table");
      trips.emplace_back(ri, static_cast<int>(layout_.omega() + d), 1.0);
      trips.emplace_back(ri, static_cast<int>(layout_.delta() + t), 1.0);
      if (layout_.interactions) {
        trips.emplace_back(ri, static_cast<int>(layout_.xi() + static_cast<Index>(t) * n + m), 1.0);
        trips.emplace_back(ri, static_cast<int>(layout_.eta() + static_cast<Index>(d) * n + m), 1.0);
      }
    }
    design_.resize(rows, layout_.size());
    design_.setFromTriplets(trips.begin(), trips.end());
    design_.makeCompressed();
    if (!(ysum > 0.0)) throw InputError("no deaths in the analysis table; the intercept is not identifiable");
    log_rate_ = std::log(ysum / psum);
    log_factorial_ = detail::log_factorial_sum(counts_);

    // constraints: one sum-to-zero row per component for each u block, then RW2
    const Eigen::MatrixXd comp = component_sum_constraints(structure.graph);
    const std::vector<Index> comp_pins = component_pins(structure.graph);
    const Index nc = comp.rows();
    constraints_ = Eigen::MatrixXd::Zero(LatentLayout::kBym2Pairs * nc + 2, layout_.size());
    for (int j = 0; j < LatentLayout::kBym2Pairs; ++j) {
      constraints_.block(j * nc, layout_.icar(j), nc, n) = comp;
      for (Index p : comp_pins) pins_.push_back(layout_.icar(j) + p);
    }
    constraints_.block(LatentLayout::kBym2Pairs * nc, layout_.omega(), 2, kSummerDays) = rw2_constraints(kSummerDays);
    pins_.push_back(layout_.omega());
    pins_.push_back(layout_.omega() + kSummerDays - 1);
  }

  // --- LatentProblem interface -------------------------------------------
  Index latent_dim() const { return layout_.size(); }
  Index hyper_dim() const { return 12 + (layout_.interactions ? 2 : 0); }
  const RowSpMat& design() const { return design_; }
  const Eigen::VectorXd& offsets() const { return offsets_; }
  const Eigen::MatrixXd& constraints() const { return constraints_; }
  const std::vector<Index>& pins() const { return pins_; }
  bool constant_curvature() const { return false; }

  void prior_triplets(const Eigen::VectorXd& theta, Triplets& t) const {
    const Hyperparameters h = from_internal(theta);
    const auto& pr = config_.priors;
    t.emplace_back(0, 0, 1.0 / pr.intercept_variance);
    for (int k = 1; k < kFixedEffects; ++k) t.emplace_back(k, k, 1.0 / pr.fixed_variance);
    for (int j = 0; j < 4; ++j)
      bym2_triplets(structure_, layout_.field(j), layout_.icar(j), h.sigma_beta[static_cast<std::size_t>(j)],
                    h.phi_beta[static_cast<std::size_t>(j)], t);
    bym2_triplets(structure_, layout_.field(4), layout_.icar(4), h.sigma_b, h.phi_b, t);
    const double tw = 1.0 / (h.sigma_omega * h.sigma_omega);
    const int o = static_cast<int>(layout_.omega());
    for (int c = 0; c < kSummerDays; ++c)
      for (int r = c; r < std::min(kSummerDays, c + 3); ++r) t.emplace_back(o + r, o + c, tw * rw2_(r, c));
    const double td = 1.0 / (h.sigma_delta * h.sigma_delta);
    for (int k = 0; k < layout_.n_years; ++k) t.emplace_back(static_cast<int>(layout_.delta()) + k, static_cast<int>(layout_.delta()) + k, td);
    if (layout_.interactions) {
      const double tx = 1.0 / (h.sigma_xi * h.sigma_xi), te = 1.0 / (h.sigma_eta * h.sigma_eta);
      for (Index k = layout_.xi(); k < layout_.eta(); ++k) t.emplace_back(static_cast<int>(k), static_cast<int>(k), tx);
      for (Index k = layout_.eta(); k < layout_.size(); ++k) t.emplace_back(static_cast<int>(k), static_cast<int>(k), te);
    }
  }

  double loglik(const Eigen::VectorXd& eta_full, const Eigen::VectorXd&, Eigen::VectorXd* grad, Eigen::VectorXd* curv) const {
    return detail::poisson_kernel(counts_, eta_full, grad, curv) - log_factorial_;
  }

  /// log pi(theta) on the internal scale, Jacobians included.
  double log_hyperprior(const Eigen::VectorXd& theta) const {
    if (theta.size() != hyper_dim()) throw InputError("hyperparameter vector has wrong length");
    for (Index i = 0; i < theta.size(); ++i)
      if (!std::isfinite(theta[i]) || std::abs(theta[i]) > kInternalBound) return kNegInf;
    const Hyperparameters h = from_internal(theta);
    const auto& pr = config_.priors;
    auto sd = [](double s, const PcPair& p) { return pc_sd_logdensity(s, p.u, p.alpha) + std::log(s); };
    auto ph = [&](double x) {
      const double phi = inv_logit(x);
      return phi_prior_.logdensity(phi) + std::log(phi) + std::log(inv_logit_complement(x));
    };
    double lp = 0.0;
    for (int j = 0; j < 4; ++j) lp += sd(h.sigma_beta[static_cast<std::size_t>(j)], pr.sd_svc) + ph(theta[4 + j]);
    lp += sd(h.sigma_b, pr.sd_spatial) + ph(theta[9]);
    lp += sd(h.sigma_omega, pr.sd_season);
    lp += sd(h.sigma_delta, pr.sd_year);
    if (layout_.interactions) lp += sd(h.sigma_xi, pr.sd_interaction) + sd(h.sigma_eta, pr.sd_interaction);
    return lp;
  }

  Eigen::VectorXd initial_latent() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(layout_.size());
    x[0] = log_rate_;
    return x;
  }

  Eigen::VectorXd initial_hyper() const { return to_internal(config_.init); }

  // --- model-specific ------------------------------------------------------
  Hyperparameters from_internal(const Eigen::VectorXd& th) const {
    Hyperparameters h;
    for (int j = 0; j < 4; ++j) {
      h.sigma_beta[static_cast<std::size_t>(j)] = std::exp(th[j]);
      h.phi_beta[static_cast<std::size_t>(j)] = inv_logit(th[4 + j]);
    }
    h.sigma_b = std::exp(th[8]);
    h.phi_b = inv_logit(th[9]);
    h.sigma_omega = std::exp(th[10]);
    h.sigma_delta = std::exp(th[11]);
    if (layout_.interactions) {
      h.sigma_xi = std::exp(th[12]);
      h.sigma_eta = std::exp(th[13]);
    }
    return h;
  }

  Eigen::VectorXd to_internal(const Hyperparameters& h) const {
    h.validate();
    Eigen::VectorXd th(hyper_dim());
    for (int j = 0; j < 4; ++j) {
      th[j] = std::log(h.sigma_beta[static_cast<std::size_t>(j)]);
      th[4 + j] = logit(std::clamp(h.phi_beta[static_cast<std::size_t>(j)], 1e-6, 1.0 - 1e-6));
    }
    th[8] = std::log(h.sigma_b);
    th[9] = logit(std::clamp(h.phi_b, 1e-6, 1.0 - 1e-6));
    th[10] = std::log(h.sigma_omega);
    th[11] = std::log(h.sigma_delta);
    if (layout_.interactions) {
      th[12] = std::log(h.sigma_xi);
      th[13] = std::log(h.sigma_eta);
    }
    return th;
  }

  std::vector<std::string> hyper_names() const {
    std::vector<std::string> v = {"log_sigma_beta1", "log_sigma_beta2", "log_sigma_beta3", "log_sigma_beta4",
                                  "logit_phi_beta1", "logit_phi_beta2", "logit_phi_beta3", "logit_phi_beta4",
                                  "log_sigma_b",     "logit_phi_b",     "log_sigma_omega", "log_sigma_delta"};
    if (layout_.interactions) {
      v.push_back("log_sigma_xi");
      v.push_back("log_sigma_eta");
    }
    return v;
  }

  const LatentLayout& layout() const { return layout_; }
  const SplineBasis& basis() const { return basis_; }
  const ScaledStructure& structure() const { return structure_; }
  const ModelConfig& config() const { return config_; }
  const Eigen::VectorXd& counts() const { return counts_; }
  const PcPhiPrior& phi_prior() const { return phi_prior_; }

  /// Beyond this magnitude an internal hyperparameter is treated as
  /// inadmissible (sigma below e^-20 or phi within e^-20 of 0 or 1).
  static constexpr double kInternalBound = 20.0;

 private:
  const ScaledStructure& structure_;
  SplineBasis basis_;
  ModelConfig config_;
  LatentLayout layout_;
  PcPhiPrior phi_prior_;
  Eigen::MatrixXd rw2_;
  RowSpMat design_;
  Eigen::VectorXd counts_;
  Eigen::VectorXd offsets_;
  Eigen::MatrixXd constraints_;
  std::vector<Index> pins_;
  double log_rate_ = 0.0;
  double log_factorial_ = 0.0;
};

}  // namespace heatsvc
