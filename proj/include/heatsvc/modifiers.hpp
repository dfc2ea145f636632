#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "heatsvc/csv.hpp"
#include "heatsvc/error.hpp"
#include "heatsvc/graph.hpp"
#include "heatsvc/laplace.hpp"
#include "heatsvc/latent_model.hpp"
#include "heatsvc/metrics.hpp"
#include "heatsvc/modifier_records.hpp"
#include "heatsvc/pc_prior.hpp"

namespace heatsvc {

inline constexpr std::array<const char*, 4> kContinuousModifiers = {"pct_over_85", "ndvi", "mean_temp", "no2"};

/// Standardized modifier design, one row per area in area-id order.
struct ModifierDesign {
  std::vector<std::string> names;
  Eigen::MatrixXd x;
  std::vector<double> sd;    // sample SD for continuous columns, NaN for dummies
  std::vector<double> mean;  // sample mean for continuous columns, NaN for dummies

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }
};

/// Orders records by area id and checks that every area 0..n-1 has exactly one.
inline std::vector<ModifierRecord> align_modifiers(const std::vector<ModifierRecord>& recs, int n_areas) {
  std::vector<ModifierRecord> out(static_cast<std::size_t>(n_areas));
  std::vector<bool> seen(static_cast<std::size_t>(n_areas), false);
  for (const auto& r : recs) {
    if (r.area_id < 0 || r.area_id >= n_areas) throw InputError("modifier record for unknown area " + std::to_string(r.area_id));
    if (seen[static_cast<std::size_t>(r.area_id)]) throw InputError("duplicate modifier record for area " + std::to_string(r.area_id));
    seen[static_cast<std::size_t>(r.area_id)] = true;
    out[static_cast<std::size_t>(r.area_id)] = r;
  }
  for (int m = 0; m < n_areas; ++m)
    if (!seen[static_cast<std::size_t>(m)]) throw InputError("no modifier record for area " + std::to_string(m));
  return out;
}

/// Throws if [1, x] is rank deficient, naming the columns involved.
inline void check_design_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
  const Eigen::Index n = x.rows(), p = x.cols() + 1;
  if (n < p) throw InputError("modifier design has " + std::to_string(p) + " columns but only " + std::to_string(n) + " areas");
  Eigen::MatrixXd full(n, p);
  full.col(0).setOnes();
  full.rightCols(p - 1) = x;
  // unit-length columns so the rank threshold is scale free
  for (Eigen::Index j = 0; j < p; ++j) full.col(j) /= std::max(full.col(j).norm(), 1e-300);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(full);
  lu.setThreshold(1e-10);
  if (lu.rank() == p) return;
  const Eigen::MatrixXd k = lu.kernel();
  std::string cols;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (k.row(j).cwiseAbs().maxCoeff() < 1e-8) continue;
    cols += (cols.empty() ? "" : ", ") + (j == 0 ? std::string("intercept") : names[static_cast<std::size_t>(j - 1)]);
  }
  throw InputError("singular modifier design; collinear columns: " + cols);
}

/// Continuous modifiers centered and scaled by sample SD; categoricals as
/// dummies against the baselines (baseline SEP, rural, German).
inline ModifierDesign standardize(const std::vector<ModifierRecord>& recs) {
  const auto n = static_cast<Eigen::Index>(recs.size());
  if (n < 2) throw InputError("modifier model needs at least two areas");
  ModifierDesign d;
  d.x.resize(n, 10);
  auto cont = [&](Eigen::Index col, const char* name, auto get) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = get(recs[static_cast<std::size_t>(i)]);
    const double mean = v.mean();
    const double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(n - 1));
    if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) throw InputError(std::string("modifier ") + name + " is constant across areas");
    d.x.col(col) = (v.array() - mean) / sd;
    d.names.emplace_back(name);
    d.sd.push_back(sd);
    d.mean.push_back(mean);
  };
  cont(0, kContinuousModifiers[0], [](const ModifierRecord& r) { return r.pct_over_85; });
  cont(1, kContinuousModifiers[1], [](const ModifierRecord& r) { return r.ndvi; });
  cont(2, kContinuousModifiers[2], [](const ModifierRecord& r) { return r.mean_temp; });
  cont(3, kContinuousModifiers[3], [](const ModifierRecord& r) { return r.no2; });

  Eigen::Index col = 4;
  auto dummy = [&](const char* prefix, const auto& levels, int baseline, auto get) {
    for (int lv = 0; lv < static_cast<int>(levels.size()); ++lv) {
      if (lv == baseline) continue;
      for (Eigen::Index i = 0; i < n; ++i) d.x(i, col) = get(recs[static_cast<std::size_t>(i)]) == lv ? 1.0 : 0.0;
      d.names.push_back(std::string(prefix) + "_" + levels[static_cast<std::size_t>(lv)]);
      d.sd.push_back(kNaN);
      d.mean.push_back(kNaN);
      ++col;
    }
  };
  dummy("sep", kSepLevels, 1, [](const ModifierRecord& r) { return r.sep_class; });
  dummy("urbanicity", kUrbanLevels, 0, [](const ModifierRecord& r) { return r.urbanicity; });
  dummy("language", kLanguageLevels, 0, [](const ModifierRecord& r) { return r.language; });
  check_design_rank(d.x, d.names);
  return d;
}

struct ModifierPriors {
  double intercept_variance = 1e6;
  double fixed_variance = 1000.0;
  PcPair sd_canton{1.0, 0.01};
  PcPair sd_spatial{1.0, 0.01};
  PcPair phi{0.5, 0.5};
  // Gamma(shape, rate) on the residual precision 1 / sigma_ERH^2
  double noise_shape = 1.0;
  double noise_rate = 5e-5;
  bool canton_effect = true;
};

/// ERH_m ~ N(a0 + H_m a + zeta_c(m) + xi_m, sigma^2) with zeta IID over
/// cantons and xi BYM2 over areas. Latent layout: a0, a, zeta, xi, u.
/// Hyperparameters: log sigma, log sigma_xi, logit phi_xi[, log sigma_zeta].
class ModifierModel {
 public:
  using Index = Eigen::Index;

  ModifierModel(const Eigen::VectorXd& outcome, const Eigen::MatrixXd& design, const ScaledStructure& structure, const ModifierPriors& priors)
      : structure_(structure), priors_(priors), y_(outcome) {
    const int n = structure.graph.n_areas;
    if (outcome.size() != n || design.rows() != n) throw InputError("modifier outcome, design and graph disagree on the number of areas");
    for (Index i = 0; i < n; ++i)
      if (!std::isfinite(outcome[i])) throw InputError("non-finite modifier outcome for area " + std::to_string(i));
    if (!(priors.intercept_variance > 0.0) || !(priors.fixed_variance > 0.0)) throw InputError("modifier prior variances must be positive");
    if (!(priors.noise_shape > 0.0) || !(priors.noise_rate > 0.0)) throw InputError("residual precision prior must have positive shape and rate");
    priors.sd_canton.validate("sigma_zeta");
    priors.sd_spatial.validate("sigma_xi");
    phi_prior_ = PcPhiPrior(scaled_inverse_eigenvalues(structure), priors.phi.u, priors.phi.alpha);
    p_ = design.cols();
    n_cantons_ = priors.canton_effect ? structure.graph.n_cantons() : 0;
    field_ = 1 + p_ + n_cantons_;
    icar_ = field_ + n;

    std::vector<Eigen::Triplet<double>> t;
    for (int m = 0; m < n; ++m) {
      t.emplace_back(m, 0, 1.0);
      for (Index j = 0; j < p_; ++j) t.emplace_back(m, static_cast<int>(1 + j), design(m, j));
      if (n_cantons_ > 0) t.emplace_back(m, static_cast<int>(1 + p_ + structure.graph.canton_of[static_cast<std::size_t>(m)]), 1.0);
      t.emplace_back(m, static_cast<int>(field_ + m), 1.0);
    }
    design_.resize(n, latent_dim());
    design_.setFromTriplets(t.begin(), t.end());
    design_.makeCompressed();
    offsets_ = Eigen::VectorXd::Zero(n);

    const Eigen::MatrixXd comp = component_sum_constraints(structure.graph);
    constraints_ = Eigen::MatrixXd::Zero(comp.rows(), latent_dim());
    constraints_.block(0, icar_, comp.rows(), n) = comp;
    for (Index p : component_pins(structure.graph)) pins_.push_back(icar_ + p);
  }

  Index latent_dim() const { return icar_ + structure_.graph.n_areas; }
  Index hyper_dim() const { return n_cantons_ > 0 ? 4 : 3; }
  const RowSpMat& design() const { return design_; }
  const Eigen::VectorXd& offsets() const { return offsets_; }
  const Eigen::MatrixXd& constraints() const { return constraints_; }
  const std::vector<Index>& pins() const { return pins_; }
  bool constant_curvature() const { return true; }

  void prior_triplets(const Eigen::VectorXd& theta, Triplets& t) const {
    t.emplace_back(0, 0, 1.0 / priors_.intercept_variance);
    for (Index j = 1; j <= p_; ++j) t.emplace_back(static_cast<int>(j), static_cast<int>(j), 1.0 / priors_.fixed_variance);
    if (n_cantons_ > 0) {
      const double tz = std::exp(-2.0 * theta[3]);
      for (int c = 0; c < n_cantons_; ++c) t.emplace_back(static_cast<int>(1 + p_ + c), static_cast<int>(1 + p_ + c), tz);
    }
    bym2_triplets(structure_, field_, icar_, std::exp(theta[1]), inv_logit(theta[2]), t);
  }

  double loglik(const Eigen::VectorXd& e, const Eigen::VectorXd& theta, Eigen::VectorXd* grad, Eigen::VectorXd* curv) const {
    const double tau = std::exp(-2.0 * theta[0]);
    const Eigen::VectorXd r = y_ - e;
    if (grad) *grad = tau * r;
    if (curv) *curv = Eigen::VectorXd::Constant(r.size(), tau);
    const double n = static_cast<double>(r.size());
    return -0.5 * tau * r.squaredNorm() + 0.5 * n * (std::log(tau) - std::log(2.0 * std::numbers::pi));
  }

  double log_hyperprior(const Eigen::VectorXd& theta) const {
    if (theta.size() != hyper_dim()) throw InputError("modifier hyperparameter vector has wrong length");
    for (Index i = 0; i < theta.size(); ++i)
      if (!std::isfinite(theta[i]) || std::abs(theta[i]) > SvcPoissonModel::kInternalBound) return kNegInf;
    const double tau = std::exp(-2.0 * theta[0]);
    double lp = loggamma_precision_logdensity(tau, priors_.noise_shape, priors_.noise_rate) + std::log(2.0 * tau);
    auto sd = [](double s, const PcPair& p) { return pc_sd_logdensity(s, p.u, p.alpha) + std::log(s); };
    lp += sd(std::exp(theta[1]), priors_.sd_spatial);
    const double phi = inv_logit(theta[2]);
    lp += phi_prior_.logdensity(phi) + std::log(phi) + std::log(inv_logit_complement(theta[2]));
    if (n_cantons_ > 0) lp += sd(std::exp(theta[3]), priors_.sd_canton);
    return lp;
  }

  Eigen::VectorXd initial_latent() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(latent_dim());
    x[0] = y_.mean();
    return x;
  }

  /// Residual, spatial and canton SDs each start at half the outcome SD.
  Eigen::VectorXd initial_hyper() const {
    const double n = static_cast<double>(y_.size());
    double s = std::sqrt((y_.array() - y_.mean()).square().sum() / std::max(1.0, n - 1.0));
    if (!(s > 1e-8 * (1.0 + std::abs(y_.mean())))) s = 1e-3 * (1.0 + std::abs(y_.mean()));
    Eigen::VectorXd th(hyper_dim());
    th[0] = std::log(0.5 * s);
    th[1] = std::log(0.5 * s);
    th[2] = 0.0;
    if (n_cantons_ > 0) th[3] = std::log(0.5 * s);
    return th;
  }

  Index coefficients() const { return 1 + p_; }
  Index field_offset() const { return field_; }
  int n_cantons() const { return n_cantons_; }

 private:
  ScaledStructure structure_;
  ModifierPriors priors_;
  Eigen::VectorXd y_;
  PcPhiPrior phi_prior_;
  Index p_ = 0;
  int n_cantons_ = 0;
  Index field_ = 0;
  Index icar_ = 0;
  RowSpMat design_;
  Eigen::VectorXd offsets_;
  Eigen::MatrixXd constraints_;
  std::vector<Index> pins_;
};

/// One empirical-Bayes fit: Gaussian marginals for a0 and a at theta*.
struct ModifierFit {
  Eigen::VectorXd mean;  // a0 then a
  Eigen::VectorXd sd;
  Eigen::VectorXd theta;
  double sigma_erh = 0.0;
  double sigma_spatial = 0.0;
  double phi_spatial = 0.0;
  double sigma_canton = kNaN;
  double log_marginal = 0.0;
  int evaluations = 0;
  bool converged = false;
};

struct ModifierFitOptions {
  ModifierPriors priors;
  NelderMeadOptions optimizer{0.5, 3000, 1e-6, 1e-5};
};

inline ModifierFit fit_modifiers(const Eigen::VectorXd& outcome, const Eigen::MatrixXd& design, const ScaledStructure& structure,
                                 const ModifierFitOptions& opt = {}, const Eigen::VectorXd* init_theta = nullptr) {
  const ModifierModel model(outcome, design, structure, opt.priors);
  const LaplaceEngine<ModifierModel> eng(model);
  const Eigen::VectorXd init = init_theta ? *init_theta : model.initial_hyper();
  const OptimizeResult opt_res = optimize_hyper(eng, init, opt.optimizer);
  if (!std::isfinite(opt_res.value)) throw NumericError("modifier model: no admissible hyperparameter value found");
  LaplaceWorkspace ws = eng.make_workspace();
  const ModeResult mode = eng.conditional_mode(opt_res.theta, ws);
  std::vector<Eigen::Index> cols(static_cast<std::size_t>(model.coefficients()));
  std::iota(cols.begin(), cols.end(), Eigen::Index{0});
  const Eigen::MatrixXd cov = ws.post.covariance_columns(cols);

  ModifierFit f;
  const Eigen::Index k = model.coefficients();
  f.mean = mode.x.head(k);
  f.sd.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (!(cov(j, j) > 0.0)) throw NumericError("modifier model: non-positive posterior variance");
    f.sd[j] = std::sqrt(cov(j, j));
  }
  f.theta = opt_res.theta;
  f.sigma_erh = std::exp(f.theta[0]);
  f.sigma_spatial = std::exp(f.theta[1]);
  f.phi_spatial = inv_logit(f.theta[2]);
  if (model.n_cantons() > 0) f.sigma_canton = std::exp(f.theta[3]);
  f.log_marginal = opt_res.value;
  f.evaluations = opt_res.evaluations;
  f.converged = opt_res.converged;
  return f;
}

/// Quantile of an equal-weight mixture of normals.
inline double mixture_quantile(const std::vector<double>& means, const std::vector<double>& sds, double p) {
  if (means.empty() || means.size() != sds.size()) throw InputError("mixture quantile needs matching, non-empty components");
  if (!(p > 0.0 && p < 1.0)) throw InputError("mixture quantile level must lie in (0, 1)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < means.size(); ++i) {
    lo = std::min(lo, means[i] - 12.0 * sds[i]);
    hi = std::max(hi, means[i] + 12.0 * sds[i]);
  }
  const double inv = 1.0 / static_cast<double>(means.size());
  auto cdf = [&](double x) {
    double s = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) {
      if (sds[i] > 0.0)
        s += 0.5 * std::erfc(-(x - means[i]) / (sds[i] * std::numbers::sqrt2));
      else
        s += x >= means[i] ? 1.0 : 0.0;
    }
    return s * inv - p;
  };
  if (lo == hi) return lo;
  std::uintmax_t iters = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(cdf, lo, hi, boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (a + b);
}

struct ModifierEffect {
  std::string variable;
  std::string mode;
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double sd_used = kNaN;
};

struct ModifierPosterior {
  std::string mode;  // "median" or "propagated"
  int samples = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<ModifierFit> fits;  // successful fits
  std::vector<ModifierEffect> effects;

  const ModifierEffect& effect(const std::string& name) const {
    for (const auto& e : effects)
      if (e.variable == name) return e;
    throw InputError("no modifier effect named " + name);
  }
};

/// Pools the fits with equal weight: the limit of drawing the same number
/// of coefficient samples from each fit.
inline std::vector<ModifierEffect> pool_fits(const std::vector<ModifierFit>& fits, const ModifierDesign& design, const std::string& mode) {
  if (fits.empty()) throw NumericError("no successful modifier fits to pool");
  std::vector<ModifierEffect> out;
  const Eigen::Index k = fits.front().mean.size();
  for (Eigen::Index j = 0; j < k; ++j) {
    std::vector<double> m, s;
    double mean = 0.0;
    for (const auto& f : fits) {
      m.push_back(f.mean[j]);
      s.push_back(f.sd[j]);
      mean += f.mean[j];
    }
    ModifierEffect e;
    e.variable = j == 0 ? "intercept" : design.names[static_cast<std::size_t>(j - 1)];
    e.mode = mode;
    e.mean = mean / static_cast<double>(fits.size());
    e.median = mixture_quantile(m, s, 0.5);
    e.lower = mixture_quantile(m, s, 0.025);
    e.upper = mixture_quantile(m, s, 0.975);
    if (j > 0) e.sd_used = design.sd[static_cast<std::size_t>(j - 1)];
    out.push_back(e);
  }
  return out;
}

/// Single fit to the per-area posterior median ERH.
inline ModifierPosterior fit_median_outcome(const Eigen::VectorXd& median_erh, const ModifierDesign& design, const ScaledStructure& structure,
                                            const ModifierFitOptions& opt = {}) {
  ModifierPosterior p;
  p.mode = "median";
  p.samples = 1;
  p.fits.push_back(fit_modifiers(median_erh, design.x, structure, opt));
  p.effects = pool_fits(p.fits, design, p.mode);
  return p;
}

/// One fit per outcome sample (columns of `outcomes`), pooled equally.
/// Failed fits are recorded and left out of the pool.
inline ModifierPosterior propagate(const Eigen::MatrixXd& outcomes, const ModifierDesign& design, const ScaledStructure& structure,
                                   const ModifierFitOptions& opt = {}, const Eigen::VectorXd* init_theta = nullptr) {
  if (outcomes.cols() < 2) throw InputError("propagation needs at least two outcome samples");
  const int s = static_cast<int>(outcomes.cols());
  std::vector<ModifierFit> fits(static_cast<std::size_t>(s));
  std::vector<std::string> errors(static_cast<std::size_t>(s));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < s; ++i) {
    try {
      fits[static_cast<std::size_t>(i)] = fit_modifiers(outcomes.col(i), design.x, structure, opt, init_theta);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
      if (errors[static_cast<std::size_t>(i)].empty()) errors[static_cast<std::size_t>(i)] = "unknown error";
    }
  }
  ModifierPosterior p;
  p.mode = "propagated";
  p.samples = s;
  for (int i = 0; i < s; ++i) {
    if (errors[static_cast<std::size_t>(i)].empty()) {
      p.fits.push_back(std::move(fits[static_cast<std::size_t>(i)]));
    } else {
      ++p.failures;
      p.failure_messages.push_back("sample " + std::to_string(i) + ": " + errors[static_cast<std::size_t>(i)]);
    }
  }
  if (p.fits.empty()) throw NumericError("all " + std::to_string(s) + " propagated modifier fits failed; first: " + p.failure_messages.front());
  p.effects = pool_fits(p.fits, design, p.mode);
  return p;
}

/// Per-area ERH at `samples` evenly spaced draw indices (n_areas x samples).
inline Eigen::MatrixXd erh_outcome_samples(const std::vector<AreaMetrics>& areas, int samples) {
  if (areas.empty()) throw InputError("no area metrics to sample from");
  const std::size_t d = areas.front().erh.size();
  if (samples < 1 || static_cast<std::size_t>(samples) > d)
    throw InputError("cannot take " + std::to_string(samples) + " outcome samples from " + std::to_string(d) + " draws");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(areas.size()), samples);
  for (int s = 0; s < samples; ++s) {
    const std::size_t k = static_cast<std::size_t>(s) * d / static_cast<std::size_t>(samples);
    for (std::size_t m = 0; m < areas.size(); ++m) out(static_cast<Eigen::Index>(m), s) = areas[m].erh[k];
  }
  return out;
}

inline Eigen::VectorXd erh_medians(const std::vector<AreaMetrics>& areas) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(areas.size()));
  for (std::size_t m = 0; m < areas.size(); ++m) out[static_cast<Eigen::Index>(m)] = areas[m].erh_summary.median;
  return out;
}

inline void write_modifier_effects(const std::filesystem::path& path, const std::vector<const ModifierPosterior*>& posteriors) {
  csv::Writer w(path);
  w.header({"variable", "mode", "median", "lower", "upper", "sd_used"});
  for (const ModifierPosterior* p : posteriors)
    for (const auto& e : p->effects)
      w.row(e.variable, e.mode, e.median, e.lower, e.upper, std::isnan(e.sd_used) ? std::string() : csv::fmt(e.sd_used));
  w.close();
}

}  // namespace heatsvc
