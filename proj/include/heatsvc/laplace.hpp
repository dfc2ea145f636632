#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "heatsvc/error.hpp"
#include "heatsvc/gmrf.hpp"

namespace heatsvc {

using RowSpMat = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
using Triplets = std::vector<Eigen::Triplet<double>>;

/// What the inference engine needs from a latent Gaussian model:
///   eta = design * x + offsets,  y | eta ~ likelihood(theta),
///   x | theta ~ N(0, Q(theta)^-1) restricted to {A x = 0}.
/// `prior_triplets` must emit the same (row, col) sequence for every theta.
/// `loglik` returns the log likelihood and fills the per-observation
/// gradient and curvature (minus the second derivative) with respect to eta.
template <class P>
concept LatentProblem = requires(const P& p, const Eigen::VectorXd& v, Triplets& t, Eigen::VectorXd* g) {
  { p.latent_dim() } -> std::convertible_to<Eigen::Index>;
  { p.hyper_dim() } -> std::convertible_to<Eigen::Index>;
  { p.design() } -> std::convertible_to<const RowSpMat&>;
  { p.offsets() } -> std::convertible_to<const Eigen::VectorXd&>;
  { p.constraints() } -> std::convertible_to<const Eigen::MatrixXd&>;
  { p.pins() } -> std::convertible_to<const std::vector<Eigen::Index>&>;
  { p.constant_curvature() } -> std::convertible_to<bool>;
  p.prior_triplets(v, t);
  { p.loglik(v, v, g, g) } -> std::convertible_to<double>;
  { p.log_hyperprior(v) } -> std::convertible_to<double>;
  { p.initial_latent() } -> std::convertible_to<Eigen::VectorXd>;
  { p.initial_hyper() } -> std::convertible_to<Eigen::VectorXd>;
};

struct LaplaceOptions {
  double gradient_tol = 1e-6;
  int max_newton = 100;
  /// Above this many precomputed (row, pair) slots, curvature assembly
  /// locates entries by binary search instead of a slot table.
  std::size_t slot_table_limit = 60'000'000;
};

struct ModeResult {
  Eigen::VectorXd x;
  double loglik = 0.0;
  double quad = 0.0;  // x' Q x
  double grad_norm = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // projected gradient max-norm per iteration
};

struct MarginalResult {
  double value = kNegInfinity();
  double loglik = 0.0;
  double quad = 0.0;
  double logdet_prior = 0.0;
  double logdet_post = 0.0;
  double log_hyperprior = 0.0;
  int newton_iterations = 0;
  Eigen::VectorXd mode;

  static constexpr double kNegInfinity() { return -std::numeric_limits<double>::infinity(); }
};

/// Factorizations reused across evaluations. One per thread.
struct LaplaceWorkspace {
  ConstrainedFactor post;
  ConstrainedFactor prior;
  SpMat m;        // lower triangle of Q + H
  SpMat q;        // lower triangle of Q
  Triplets trips;
};

template <LatentProblem Problem>
class LaplaceEngine {
 public:
  using Index = Eigen::Index;

  explicit LaplaceEngine(const Problem& problem, LaplaceOptions opts = {}) : prob_(problem), opts_(opts) {
    const Index p = prob_.latent_dim();
    const RowSpMat& phi = prob_.design();
    if (phi.cols() != p) throw InputError("design matrix width does not match latent dimension");
    if (prob_.offsets().size() != phi.rows()) throw InputError("offset length does not match observation count");

    // prior pattern (values irrelevant here)
    Triplets t;
    prob_.prior_triplets(prob_.initial_hyper(), t);
    prior_len_ = t.size();
    for (Index i = 0; i < p; ++i) t.emplace_back(static_cast<int>(i), static_cast<int>(i), 0.0);
    SpMat prior_pat = lower_from_triplets(p, t);
    prior_pat.makeCompressed();

    // curvature pattern: lower triangle of design' design
    SpMat phic = SpMat(phi);
    for (Index k = 0; k < phic.nonZeros(); ++k) phic.valuePtr()[k] = 1.0;
    SpMat hh = SpMat(phic.transpose() * phic).triangularView<Eigen::Lower>();
    SpMat pat = hh + prior_pat;
    pat.makeCompressed();
    std::fill(pat.valuePtr(), pat.valuePtr() + pat.nonZeros(), 0.0);
    std::fill(prior_pat.valuePtr(), prior_pat.valuePtr() + prior_pat.nonZeros(), 0.0);
    m_pattern_ = pat;
    q_pattern_ = prior_pat;

    t.resize(prior_len_);
    prior_slot_m_.resize(prior_len_);
    prior_slot_q_.resize(prior_len_);
    for (std::size_t k = 0; k < prior_len_; ++k) {
      int r = t[k].row(), c = t[k].col();
      if (r < c) std::swap(r, c);
      prior_slot_m_[k] = slot(m_pattern_, r, c);
      prior_slot_q_[k] = slot(q_pattern_, r, c);
    }

    std::size_t pairs = 0;
    for (Index r = 0; r < phi.rows(); ++r) {
      const auto q = static_cast<std::size_t>(phi.outerIndexPtr()[r + 1] - phi.outerIndexPtr()[r]);
      pairs += q * (q + 1) / 2;
    }
    if (pairs <= opts_.slot_table_limit) {
      obs_slots_.reserve(pairs);
      for (Index r = 0; r < phi.rows(); ++r) {
        const int s = phi.outerIndexPtr()[r], e = phi.outerIndexPtr()[r + 1];
        for (int a = s; a < e; ++a)
          for (int b = a; b < e; ++b) obs_slots_.push_back(slot(m_pattern_, phi.innerIndexPtr()[b], phi.innerIndexPtr()[a]));
      }
    }
  }

  const Problem& problem() const { return prob_; }
  const LaplaceOptions& options() const { return opts_; }

  LaplaceWorkspace make_workspace() const {
    LaplaceWorkspace ws;
    ws.m = m_pattern_;
    ws.q = q_pattern_;
    ws.post.analyze(m_pattern_);
    ws.prior.analyze(q_pattern_);
    return ws;
  }

  /// Lower triangle of Q(theta) in the workspace.
  void fill_prior(const Eigen::VectorXd& theta, LaplaceWorkspace& ws) const {
    ws.trips.clear();
    prob_.prior_triplets(theta, ws.trips);
    if (ws.trips.size() != prior_len_) throw InputError("prior structure changed between hyperparameter values");
    double* qv = ws.q.valuePtr();
    std::fill(qv, qv + ws.q.nonZeros(), 0.0);
    for (std::size_t k = 0; k < prior_len_; ++k) qv[prior_slot_q_[k]] += ws.trips[k].value();
  }

  /// Newton iterations for the mode of log p(y|x) - x'Qx/2 on {Ax = 0}.
  /// On return `ws.post` holds the factorization of Q + H at the mode and
  /// `ws.q` holds Q(theta).
  ModeResult conditional_mode(const Eigen::VectorXd& theta, LaplaceWorkspace& ws, const Eigen::VectorXd* start = nullptr) const {
    fill_prior(theta, ws);
    const RowSpMat& phi = prob_.design();
    const Eigen::VectorXd& off = prob_.offsets();
    const Eigen::MatrixXd& a = prob_.constraints();
    const Index n = phi.rows();

    ModeResult res;
    res.x = start ? *start : prob_.initial_latent();
    Eigen::LLT<Eigen::MatrixXd> aat;
    if (a.rows() > 0) aat.compute(a * a.transpose());

    Eigen::VectorXd grad(n), curv(n);
    auto qx_of = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return ws.q.selfadjointView<Eigen::Lower>() * x; };

    Eigen::VectorXd lin = phi * res.x;
    double ll = prob_.loglik(lin + off, theta, &grad, &curv);
    Eigen::VectorXd qx = qx_of(res.x);
    double obj = ll - 0.5 * res.x.dot(qx);
    if (!std::isfinite(obj)) throw NumericError("non-finite objective at the Newton starting point");

    bool factor_current = false;
    bool converged = false;
    for (int it = 0; it <= opts_.max_newton; ++it) {
      Eigen::VectorXd g = phi.transpose() * grad - qx;
      if (a.rows() > 0) g -= a.transpose() * aat.solve(a * g);
      res.grad_norm = g.lpNorm<Eigen::Infinity>();
      res.trace.push_back(res.grad_norm);
      if (res.grad_norm < opts_.gradient_tol) {
        converged = true;
        break;
      }
      if (it == opts_.max_newton) break;

      assemble_posterior(curv, ws);
      ws.post.factorize(ws.m, a, prob_.pins());
      factor_current = true;
      Eigen::VectorXd b = phi.transpose() * Eigen::VectorXd(grad + curv.cwiseProduct(lin));
      Eigen::VectorXd x_new = ws.post.solve(b);
      Eigen::VectorXd step = x_new - res.x;

      double scale = 1.0;
      Eigen::VectorXd grad_new(n), curv_new(n), lin_new, qx_new;
      double ll_new = 0.0, obj_new = -std::numeric_limits<double>::infinity();
      for (int half = 0; half < 40; ++half) {
        Eigen::VectorXd cand = res.x + scale * step;
        lin_new = phi * cand;
        ll_new = prob_.loglik(lin_new + off, theta, &grad_new, &curv_new);
        qx_new = qx_of(cand);
        obj_new = ll_new - 0.5 * cand.dot(qx_new);
        if (std::isfinite(obj_new) && obj_new >= obj - 1e-12 * (1.0 + std::abs(obj))) {
          x_new = std::move(cand);
          break;
        }
        scale *= 0.5;
      }
      if (!std::isfinite(obj_new)) throw NumericError("Newton line search produced a non-finite objective");
      if (scale != 1.0 || !prob_.constant_curvature()) factor_current = false;
      res.x = std::move(x_new);
      lin = std::move(lin_new);
      grad = std::move(grad_new);
      curv = std::move(curv_new);
      qx = std::move(qx_new);
      ll = ll_new;
      obj = obj_new;
      res.iterations = it + 1;
    }
    if (!converged) {
      std::ostringstream msg;
      msg << "conditional mode did not converge in " << opts_.max_newton << " Newton iterations; gradient trace:";
      for (double gnorm : res.trace) msg << ' ' << gnorm;
      throw NumericError(msg.str());
    }
    if (!factor_current) {
      assemble_posterior(curv, ws);
      ws.post.factorize(ws.m, a, prob_.pins());
    }
    res.loglik = ll;
    res.quad = res.x.dot(qx);
    return res;
  }

  /// Laplace approximation of log p(theta | y) up to a constant.
  MarginalResult log_marginal(const Eigen::VectorXd& theta, LaplaceWorkspace& ws, const Eigen::VectorXd* start = nullptr) const {
    MarginalResult out;
    out.log_hyperprior = prob_.log_hyperprior(theta);
    if (!std::isfinite(out.log_hyperprior)) return out;
    ModeResult mode = conditional_mode(theta, ws, start);
    ws.prior.factorize(ws.q, prob_.constraints(), prob_.pins());
    out.loglik = mode.loglik;
    out.quad = mode.quad;
    out.logdet_prior = ws.prior.log_det();
    out.logdet_post = ws.post.log_det();
    out.newton_iterations = mode.iterations;
    out.value = out.log_hyperprior + out.loglik - 0.5 * out.quad + 0.5 * (out.logdet_prior - out.logdet_post);
    out.mode = std::move(mode.x);
    return out;
  }

 private:
  static int slot(const SpMat& m, int row, int col) {
    const int* inner = m.innerIndexPtr();
    const int s = m.outerIndexPtr()[col], e = m.outerIndexPtr()[col + 1];
    const int* hit = std::lower_bound(inner + s, inner + e, row);
    if (hit == inner + e || *hit != row) throw std::logic_error("entry missing from precision pattern");
    return static_cast<int>(hit - inner);
  }

  void assemble_posterior(const Eigen::VectorXd& curv, LaplaceWorkspace& ws) const {
    double* mv = ws.m.valuePtr();
    std::fill(mv, mv + ws.m.nonZeros(), 0.0);
    for (std::size_t k = 0; k < prior_len_; ++k) mv[prior_slot_m_[k]] += ws.trips[k].value();
    const RowSpMat& phi = prob_.design();
    const int* outer = phi.outerIndexPtr();
    const int* inner = phi.innerIndexPtr();
    const double* val = phi.valuePtr();
    if (!obs_slots_.empty()) {
      const int* sl = obs_slots_.data();
      for (Index r = 0; r < phi.rows(); ++r) {
        const double c = curv[r];
        for (int a = outer[r]; a < outer[r + 1]; ++a) {
          const double ca = c * val[a];
          for (int b = a; b < outer[r + 1]; ++b) mv[*sl++] += ca * val[b];
        }
      }
    } else {
      for (Index r = 0; r < phi.rows(); ++r) {
        const double c = curv[r];
        for (int a = outer[r]; a < outer[r + 1]; ++a) {
          const double ca = c * val[a];
          for (int b = a; b < outer[r + 1]; ++b) mv[slot(ws.m, inner[b], inner[a])] += ca * val[b];
        }
      }
    }
  }

  const Problem& prob_;
  LaplaceOptions opts_;
  SpMat m_pattern_;
  SpMat q_pattern_;
  std::size_t prior_len_ = 0;
  std::vector<int> prior_slot_m_;
  std::vector<int> prior_slot_q_;
  std::vector<int> obs_slots_;
};

// ---------------------------------------------------------------------------
// Hyperparameter search

struct TraceEntry {
  Eigen::VectorXd theta;
  double value = 0.0;  // log marginal
};

struct NelderMeadOptions {
  double initial_step = 1.0;
  int max_evaluations = 3000;
  double f_tol = 1e-4;  // spread of log-marginal values across the simplex
  double x_tol = 1e-4;  // simplex size relative to (1 + |theta|)
};

struct OptimizeResult {
  Eigen::VectorXd theta;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
  std::string warning;
  std::vector<TraceEntry> trace;
};

/// Maximizes f by Nelder-Mead with dimension-adaptive coefficients.
/// Failed evaluations (NumericError) count as -infinity.
inline OptimizeResult nelder_mead_maximize(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& init,
                                           const NelderMeadOptions& opt = {}) {
  OptimizeResult res;
  const Eigen::Index k = init.size();
  auto eval = [&](const Eigen::VectorXd& th) {
    double v = -std::numeric_limits<double>::infinity();
    try {
      v = f(th);
    } catch (const NumericError&) {
    }
    if (std::isnan(v)) v = -std::numeric_limits<double>::infinity();
    res.trace.push_back({th, v});
    ++res.evaluations;
    return -v;  // minimize
  };
  if (k == 0) {
    res.theta = init;
    res.value = -eval(init);
    res.converged = true;
    return res;
  }
  const double n = static_cast<double>(k);
  const double alpha = 1.0, gamma = 1.0 + 2.0 / n, rho = 0.75 - 1.0 / (2.0 * n), sigma = 1.0 - 1.0 / n;

  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(k + 1), init);
  std::vector<double> fs(static_cast<std::size_t>(k + 1));
  for (Eigen::Index i = 0; i < k; ++i) xs[static_cast<std::size_t>(i + 1)][i] += opt.initial_step;
  for (std::size_t i = 0; i < xs.size(); ++i) fs[i] = eval(xs[i]);

  std::vector<std::size_t> order(xs.size());
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    double size = 0.0;
    for (const auto& x : xs) size = std::max(size, (x - xs[best]).lpNorm<Eigen::Infinity>());
    const double spread = fs[worst] - fs[best];
    if (std::isfinite(spread) && (spread <= opt.f_tol || size <= opt.x_tol * (1.0 + xs[best].lpNorm<Eigen::Infinity>()))) {
      res.converged = true;
      break;
    }
    if (res.evaluations >= opt.max_evaluations) {
      res.warning = "hyperparameter search hit the evaluation cap (" + std::to_string(opt.max_evaluations) + "); best point returned";
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(k);
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (i != worst) centroid += xs[i];
    centroid /= n;

    Eigen::VectorXd xr = centroid + alpha * (centroid - xs[worst]);
    const double fr = eval(xr);
    if (fr < fs[best]) {
      Eigen::VectorXd xe = centroid + gamma * (xr - centroid);
      const double fe = eval(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
      continue;
    }
    if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
      continue;
    }
    const bool outside = fr < fs[worst];
    Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + rho * (xr - centroid)) : Eigen::VectorXd(centroid + rho * (xs[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : fs[worst])) {
      xs[worst] = xc;
      fs[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i == best) continue;
      xs[i] = xs[best] + sigma * (xs[i] - xs[best]);
      fs[i] = eval(xs[i]);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < fs.size(); ++i)
    if (fs[i] < fs[best]) best = i;
  res.theta = xs[best];
  res.value = -fs[best];
  return res;
}

/// Maximizes the Laplace log marginal over the internal hyperparameters.
/// Each evaluation warm-starts Newton from the mode of the best point so far.
template <LatentProblem Problem>
OptimizeResult optimize_hyper(const LaplaceEngine<Problem>& engine, const Eigen::VectorXd& init, const NelderMeadOptions& opt = {}) {
  LaplaceWorkspace ws = engine.make_workspace();
  Eigen::VectorXd warm = engine.problem().initial_latent();
  double best = -std::numeric_limits<double>::infinity();
  auto f = [&](const Eigen::VectorXd& th) {
    MarginalResult r = engine.log_marginal(th, ws, &warm);
    if (r.value > best && r.mode.size() > 0) {
      best = r.value;
      warm = r.mode;
    }
    return r.value;
  };
  return nelder_mead_maximize(f, init, opt);
}

/// Central finite-difference Hessian of the log marginal at theta.
template <LatentProblem Problem>
Eigen::MatrixXd log_marginal_hessian(const LaplaceEngine<Problem>& engine, const Eigen::VectorXd& theta, double h = 0.05) {
  LaplaceWorkspace ws = engine.make_workspace();
  const Eigen::Index k = theta.size();
  MarginalResult centre = engine.log_marginal(theta, ws);
  const Eigen::VectorXd warm = centre.mode;
  auto f = [&](const Eigen::VectorXd& th) { return engine.log_marginal(th, ws, &warm).value; };
  Eigen::MatrixXd hess(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    hess(i, i) = (f(tp) - 2.0 * centre.value + f(tm)) / (h * h);
    for (Eigen::Index j = 0; j < i; ++j) {
      Eigen::VectorXd pp = theta, pm = theta, mp = theta, mm = theta;
      pp[i] += h; pp[j] += h;
      pm[i] += h; pm[j] -= h;
      mp[i] -= h; mp[j] += h;
      mm[i] -= h; mm[j] -= h;
      hess(i, j) = hess(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
    }
  }
  return hess;
}

// ---------------------------------------------------------------------------
// Posterior sampling

struct PosteriorDraws {
  Eigen::MatrixXd latent;  // latent_dim x n_draws
  Eigen::MatrixXd hyper;   // hyper_dim x n_draws (internal scale)
  Eigen::VectorXd mode;    // conditional mode at theta*
  Eigen::VectorXd theta_star;
  std::uint64_t seed = 0;
  std::string strategy = "empirical_bayes";
  std::vector<double> grid_weights;

  Eigen::Index n_draws() const { return latent.cols(); }
};

struct DrawOptions {
  int n_draws = 1000;
  std::uint64_t seed = 1;
  bool grid = false;
  double grid_step = 1.0;     // spacing in standardized hyperparameter units
  long max_grid_points = 15625;  // 5^6
};

/// Independent RNG stream for draw `index`.
inline Rng stream_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  return Rng(seq);
}

/// Draws from the constrained Gaussian approximation at theta* (default),
/// or from a mixture over a 5-point-per-dimension grid in standardized
/// hyperparameter coordinates weighted by the Laplace log marginal.
template <LatentProblem Problem>
PosteriorDraws draw_posterior(const LaplaceEngine<Problem>& engine, const Eigen::VectorXd& theta_star, const DrawOptions& opt = {}) {
  if (opt.n_draws <= 0) throw InputError("number of posterior draws must be positive");
  const Eigen::Index p = engine.problem().latent_dim();
  const Eigen::Index k = theta_star.size();
  PosteriorDraws out;
  out.seed = opt.seed;
  out.theta_star = theta_star;
  out.latent.resize(p, opt.n_draws);
  out.hyper.resize(k, opt.n_draws);
  LaplaceWorkspace ws = engine.make_workspace();

  if (!opt.grid || k == 0) {
    ModeResult mode = engine.conditional_mode(theta_star, ws);
    out.mode = mode.x;
    for (int d = 0; d < opt.n_draws; ++d) {
      Rng rng = stream_rng(opt.seed, static_cast<std::uint64_t>(d));
      out.latent.col(d) = mode.x + ws.post.sample(rng);
      out.hyper.col(d) = theta_star;
    }
    return out;
  }

  out.strategy = "grid";
  long points = 1;
  for (Eigen::Index i = 0; i < k; ++i) {
    points *= 5;
    if (points > opt.max_grid_points)
      throw InputError("hyperparameter grid of 5^" + std::to_string(k) + " points exceeds the limit of " +
                       std::to_string(opt.max_grid_points) + "; use the empirical-Bayes strategy");
  }
  Eigen::MatrixXd hess = -log_marginal_hessian(engine, theta_star);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (hess + hess.transpose()));
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(1e-3);
  Eigen::MatrixXd to_theta = es.eigenvectors() * lam.cwiseInverse().cwiseSqrt().asDiagonal();

  MarginalResult centre = engine.log_marginal(theta_star, ws);
  out.mode = centre.mode;
  std::vector<Eigen::VectorXd> thetas;
  std::vector<double> logw;
  std::vector<int> z(static_cast<std::size_t>(k), -2);
  for (long pt = 0; pt < points; ++pt) {
    Eigen::VectorXd zz(k);
    for (Eigen::Index i = 0; i < k; ++i) zz[i] = opt.grid_step * z[static_cast<std::size_t>(i)];
    Eigen::VectorXd th = theta_star + to_theta * zz;
    double lm = -std::numeric_limits<double>::infinity();
    try {
      lm = engine.log_marginal(th, ws, &centre.mode).value;
    } catch (const NumericError&) {
    }
    thetas.push_back(th);
    logw.push_back(lm);
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (++z[i] <= 2) break;
      z[i] = -2;
    }
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  std::vector<double> w(logw.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) total += (w[i] = std::exp(logw[i] - top));
  for (double& v : w) v /= total;
  out.grid_weights = w;

  // largest-remainder allocation of draws to grid points
  std::vector<int> alloc(w.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int assigned = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double exact = w[i] * opt.n_draws;
    alloc[i] = static_cast<int>(std::floor(exact));
    assigned += alloc[i];
    rem.emplace_back(exact - alloc[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; assigned < opt.n_draws; ++i, ++assigned) ++alloc[rem[static_cast<std::size_t>(i)].second];

  int d = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (alloc[i] == 0) continue;
    ModeResult mode = engine.conditional_mode(thetas[i], ws, &centre.mode);
    for (int j = 0; j < alloc[i]; ++j, ++d) {
      Rng rng = stream_rng(opt.seed, static_cast<std::uint64_t>(d));
      out.latent.col(d) = mode.x + ws.post.sample(rng);
      out.hyper.col(d) = thetas[i];
    }
  }
  return out;
}

}  // namespace heatsvc
