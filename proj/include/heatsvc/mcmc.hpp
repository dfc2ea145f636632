#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "heatsvc/error.hpp"
#include "heatsvc/laplace.hpp"

namespace heatsvc {

/// Reference sampler for small problems. Each iteration runs two
/// Metropolis-Hastings blocks:
///   theta | x : random walk on the internal scale
///   x | theta : independence proposal N(mode(theta), (Q + H)^-1) on {Ax = 0}
/// and every `joint_every` iterations a joint move proposes theta by random
/// walk together with a fresh x from the approximation at the new theta.
/// All moves use the exact ratio of p(y|x) p(x|theta) p(theta); the Gaussian
/// approximation only shapes the proposals. Random-walk scales adapt during
/// burn-in only. With `sample_hyper = false` theta stays at its initial value.
struct McmcOptions {
  int chains = 2;
  int iterations = 5000;  // per chain, after burn-in
  int burn_in = 1000;     // per chain; proposal scale adapts here only
  int thin = 10;
  std::uint64_t seed = 1;
  bool sample_hyper = true;
  double init_jitter = 0.5;  // spread of chain starting points (internal scale)
  double target_acceptance = 0.25;
  int max_failures = 500;  // consecutive failed proposals before giving up
  int joint_every = 5;     // 0 disables the joint move
};

struct McmcResult {
  Eigen::MatrixXd latent;  // latent_dim x kept draws (chains concatenated)
  Eigen::MatrixXd hyper;   // hyper_dim x kept draws
  std::vector<double> acceptance;        // latent block, per chain, post burn-in
  std::vector<double> hyper_acceptance;  // hyperparameter block, per chain
  std::vector<double> joint_acceptance;  // joint move, per chain
  std::vector<int> failures;             // per chain, hyperparameter proposals whose mode failed
  Eigen::VectorXd rhat_latent;     // split R-hat for the tracked latent coordinates
  Eigen::VectorXd rhat_hyper;
  std::vector<Eigen::Index> tracked;
  int chains = 0;
  int draws_per_chain = 0;
  std::uint64_t seed = 0;

  double max_rhat() const {
    double m = 0.0;
    for (Eigen::Index i = 0; i < rhat_latent.size(); ++i) m = std::max(m, rhat_latent[i]);
    for (Eigen::Index i = 0; i < rhat_hyper.size(); ++i) m = std::max(m, rhat_hyper[i]);
    return m;
  }
};

/// Split-chain potential scale reduction. `draws` holds one row per chain.
inline double split_rhat(const Eigen::MatrixXd& draws) {
  const Eigen::Index half = draws.cols() / 2;
  if (half < 2) throw InputError("split R-hat needs at least 4 draws per chain");
  const Eigen::Index m = 2 * draws.rows();
  Eigen::MatrixXd parts(m, half);
  for (Eigen::Index c = 0; c < draws.rows(); ++c) {
    parts.row(2 * c) = draws.row(c).head(half);
    parts.row(2 * c + 1) = draws.row(c).segment(draws.cols() - half, half);
  }
  const Eigen::VectorXd means = parts.rowwise().mean();
  double w = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) w += (parts.row(i).array() - means[i]).square().sum() / static_cast<double>(half - 1);
  w /= static_cast<double>(m);
  const double grand = means.mean();
  const double b = static_cast<double>(half) * (means.array() - grand).square().sum() / static_cast<double>(m - 1);
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (static_cast<double>(half - 1) / static_cast<double>(half)) * w + b / static_cast<double>(half);
  return std::sqrt(var_plus / w);
}

namespace detail {

/// Gaussian approximation of x | theta, y and the quantities the two
/// blocks need at the current theta.
struct BlockState {
  Eigen::VectorXd theta;
  Eigen::VectorXd x;
  Eigen::VectorXd mode;
  double log_prior_theta = 0.0;  // log p(theta)
  double log_det_prior = 0.0;    // constrained log det Q(theta)
  double log_lik = 0.0;          // log p(y | x)
  double quad = 0.0;             // x' Q(theta) x
  double log_q = 0.0;            // log proposal density of x, up to a shared constant
};

inline std::string format_theta(const Eigen::VectorXd& th) {
  std::string s;
  for (Eigen::Index i = 0; i < th.size(); ++i) s += (i ? " " : "") + std::to_string(th[i]);
  return s;
}

}  // namespace detail

/// Runs `opt.chains` independent chains (in parallel when OpenMP is on).
/// `tracked` selects the latent coordinates that get convergence
/// diagnostics; by default the first min(p, 16) coordinates.
template <LatentProblem Problem>
McmcResult mcmc_reference(const LaplaceEngine<Problem>& eng, const McmcOptions& opt, std::vector<Eigen::Index> tracked = {}) {
  if (opt.chains < 1 || opt.iterations < 4 || opt.burn_in < 0 || opt.thin < 1)
    throw InputError("MCMC needs chains >= 1, iterations >= 4, burn_in >= 0 and thin >= 1");
  const Problem& prob = eng.problem();
  const Eigen::Index p = prob.latent_dim(), k = prob.hyper_dim();
  if (tracked.empty())
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(p, 16); ++i) tracked.push_back(i);
  const int kept = opt.iterations / opt.thin;
  if (kept < 4) throw InputError("MCMC keeps fewer than 4 draws per chain; lower thin or raise iterations");
  const bool move_hyper = opt.sample_hyper && k > 0;

  McmcResult res;
  res.chains = opt.chains;
  res.draws_per_chain = kept;
  res.seed = opt.seed;
  res.tracked = tracked;
  res.latent.resize(p, static_cast<Eigen::Index>(kept) * opt.chains);
  res.hyper.resize(k, static_cast<Eigen::Index>(kept) * opt.chains);
  res.acceptance.assign(static_cast<std::size_t>(opt.chains), 0.0);
  res.hyper_acceptance.assign(static_cast<std::size_t>(opt.chains), 0.0);
  res.joint_acceptance.assign(static_cast<std::size_t>(opt.chains), 0.0);
  res.failures.assign(static_cast<std::size_t>(opt.chains), 0);
  std::vector<std::string> errors(static_cast<std::size_t>(opt.chains));
  const Eigen::VectorXd theta0 = prob.initial_hyper();

#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < opt.chains; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    try {
      Rng rng = stream_rng(opt.seed, 0x100000000ull + static_cast<std::uint64_t>(c));
      std::normal_distribution<double> z(0.0, 1.0);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      LaplaceWorkspace ws = eng.make_workspace();   // posterior approximation at the current theta
      LaplaceWorkspace ws2 = eng.make_workspace();  // approximation at a proposed theta
      LaplaceWorkspace wsp = eng.make_workspace();  // prior factorization for theta proposals
      detail::BlockState cur;
      int consecutive = 0;
      const RowSpMat& design = prob.design();

      auto loglik_of = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& th) {
        return prob.loglik(Eigen::VectorXd(design * x + prob.offsets()), th, nullptr, nullptr);
      };
      // Gaussian approximation at s.theta into `w`; refreshes log_q of s.x
      auto refresh_approx = [&](detail::BlockState& s, LaplaceWorkspace& w) {
        const ModeResult m = eng.conditional_mode(s.theta, w, &s.mode);
        s.mode = m.x;
        s.log_q = 0.5 * w.post.log_det() - 0.5 * w.post.quad(Eigen::VectorXd(s.x - s.mode));
      };
      // prior pieces at s.theta for the current s.x, using wsp
      auto refresh_prior = [&](detail::BlockState& s) {
        s.log_prior_theta = prob.log_hyperprior(s.theta);
        eng.fill_prior(s.theta, wsp);
        wsp.prior.factorize(wsp.q, prob.constraints(), prob.pins());
        s.log_det_prior = wsp.prior.log_det();
        s.quad = wsp.prior.quad(s.x);
        s.log_lik = loglik_of(s.x, s.theta);
      };
      auto adapt = [&](double& log_scale, double log_alpha, bool ok, int it) {
        const double a = ok ? std::exp(std::min(0.0, log_alpha)) : 0.0;
        log_scale += (a - opt.target_acceptance) * std::pow(1.0 + it / 50.0, -0.6);
      };
      auto fail = [&](bool burning) {
        if (!burning) ++res.failures[ci];
        if (++consecutive > opt.max_failures)
          throw NumericError("chain " + std::to_string(c) + " diverged: " + std::to_string(consecutive) +
                             " consecutive hyperparameter proposals failed near theta = [" + detail::format_theta(cur.theta) + "]");
      };

      cur.theta = theta0;
      if (move_hyper && c > 0)
        for (Eigen::Index i = 0; i < k; ++i) cur.theta[i] += opt.init_jitter * z(rng);
      if (!std::isfinite(prob.log_hyperprior(cur.theta))) cur.theta = theta0;
      if (!std::isfinite(prob.log_hyperprior(cur.theta))) throw InputError("initial hyperparameters are inadmissible");
      cur.mode = prob.initial_latent();
      cur.x = cur.mode;
      refresh_approx(cur, ws);
      cur.x = cur.mode;
      cur.log_q = 0.5 * ws.post.log_det();
      refresh_prior(cur);

      Eigen::MatrixXd chol = Eigen::MatrixXd::Identity(k, k) * 0.1;
      double log_scale = 0.0, log_scale_joint = 0.0;
      std::vector<Eigen::VectorXd> history;
      int acc_x = 0, acc_th = 0, acc_joint = 0, n_joint = 0;
      const int total = opt.burn_in + opt.iterations;
      for (int it = 0; it < total; ++it) {
        const bool burning = it < opt.burn_in;

        // theta | x
        if (move_hyper) {
          detail::BlockState next = cur;
          next.theta = cur.theta + std::exp(log_scale) * (chol * standard_normal(rng, k));
          double log_alpha = -std::numeric_limits<double>::infinity();
          bool ok = std::isfinite(prob.log_hyperprior(next.theta));
          if (ok) {
            try {
              refresh_prior(next);
              log_alpha = (next.log_prior_theta - cur.log_prior_theta) + 0.5 * (next.log_det_prior - cur.log_det_prior) -
                          0.5 * (next.quad - cur.quad) + (next.log_lik - cur.log_lik);
              ok = std::isfinite(log_alpha);
            } catch (const NumericError&) {
              ok = false;
            }
          }
          bool accept = ok && std::log(unif(rng)) < log_alpha;
          if (accept) {
            try {
              refresh_approx(next, ws2);
              std::swap(ws, ws2);
              cur = std::move(next);
            } catch (const NumericError&) {
              accept = false;
              ok = false;
            }
          }
          if (ok) consecutive = 0;
          else fail(burning);
          if (accept && !burning) ++acc_th;
          if (burning) {
            adapt(log_scale, log_alpha, ok, it);
            history.push_back(cur.theta);
            if ((it + 1) % 200 == 0 && history.size() >= 2 * static_cast<std::size_t>(k)) {
              Eigen::MatrixXd h(k, static_cast<Eigen::Index>(history.size()));
              for (std::size_t j = 0; j < history.size(); ++j) h.col(static_cast<Eigen::Index>(j)) = history[j];
              const Eigen::VectorXd mu = h.rowwise().mean();
              const Eigen::MatrixXd centred = h.colwise() - mu;
              Eigen::MatrixXd cov = centred * centred.transpose() / static_cast<double>(h.cols() - 1);
              cov *= 2.38 * 2.38 / static_cast<double>(k);
              cov.diagonal().array() += 1e-6;
              Eigen::LLT<Eigen::MatrixXd> llt(cov);
              if (llt.info() == Eigen::Success) chol = llt.matrixL();
            }
          }
        }

        // joint (theta, x)
        if (move_hyper && opt.joint_every > 0 && it % opt.joint_every == 0) {
          detail::BlockState next;
          next.theta = cur.theta + std::exp(log_scale_joint) * (chol * standard_normal(rng, k));
          next.mode = cur.mode;
          double log_alpha = -std::numeric_limits<double>::infinity();
          bool ok = std::isfinite(prob.log_hyperprior(next.theta));
          if (ok) {
            try {
              const ModeResult m = eng.conditional_mode(next.theta, ws2, &cur.mode);
              next.mode = m.x;
              const Eigen::VectorXd dev = ws2.post.sample(rng);
              next.x = next.mode + dev;
              next.log_q = 0.5 * ws2.post.log_det() - 0.5 * ws2.post.quad(dev);
              refresh_prior(next);
              log_alpha = (next.log_prior_theta - cur.log_prior_theta) + 0.5 * (next.log_det_prior - cur.log_det_prior) -
                          0.5 * (next.quad - cur.quad) + (next.log_lik - cur.log_lik) + (cur.log_q - next.log_q);
              ok = std::isfinite(log_alpha);
            } catch (const NumericError&) {
              ok = false;
            }
          }
          const bool accept = ok && std::log(unif(rng)) < log_alpha;
          if (accept) {
            std::swap(ws, ws2);
            cur = std::move(next);
          }
          if (ok) consecutive = 0;
          else fail(burning);
          if (burning) adapt(log_scale_joint, log_alpha, ok, it / opt.joint_every);
          else {
            ++n_joint;
            if (accept) ++acc_joint;
          }
        }

        // x | theta
        {
          const Eigen::VectorXd dev = ws.post.sample(rng);
          const Eigen::VectorXd x = cur.mode + dev;
          const double ll = loglik_of(x, cur.theta);
          const double quad = x.dot(ws.q.template selfadjointView<Eigen::Lower>() * x);
          const double log_q = 0.5 * ws.post.log_det() - 0.5 * ws.post.quad(dev);
          const double log_alpha = (ll - cur.log_lik) - 0.5 * (quad - cur.quad) + (cur.log_q - log_q);
          if (std::isfinite(log_alpha) && std::log(unif(rng)) < log_alpha) {
            cur.x = x;
            cur.log_lik = ll;
            cur.quad = quad;
            cur.log_q = log_q;
            if (!burning) ++acc_x;
          }
        }
        if (!std::isfinite(cur.log_lik) || !cur.x.allFinite())
          throw NumericError("chain " + std::to_string(c) + " diverged: non-finite state at iteration " + std::to_string(it));

        if (burning) continue;
        const int j = it - opt.burn_in + 1;
        if (j % opt.thin == 0 && j / opt.thin <= kept) {
          const Eigen::Index col = static_cast<Eigen::Index>(c) * kept + j / opt.thin - 1;
          res.latent.col(col) = cur.x;
          res.hyper.col(col) = cur.theta;
        }
      }
      res.acceptance[ci] = static_cast<double>(acc_x) / opt.iterations;
      res.hyper_acceptance[ci] = move_hyper ? static_cast<double>(acc_th) / opt.iterations : 0.0;
      res.joint_acceptance[ci] = n_joint > 0 ? static_cast<double>(acc_joint) / n_joint : 0.0;
    } catch (const std::exception& e) {
      errors[ci] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw NumericError("MCMC reference failed: " + e);

  auto rhat_of = [&](const Eigen::MatrixXd& all, Eigen::Index row) {
    Eigen::MatrixXd per(opt.chains, kept);
    for (int c = 0; c < opt.chains; ++c) per.row(c) = all.row(row).segment(static_cast<Eigen::Index>(c) * kept, kept);
    return split_rhat(per);
  };
  res.rhat_latent.resize(static_cast<Eigen::Index>(tracked.size()));
  for (std::size_t i = 0; i < tracked.size(); ++i) res.rhat_latent[static_cast<Eigen::Index>(i)] = rhat_of(res.latent, tracked[i]);
  res.rhat_hyper.resize(move_hyper ? k : 0);
  if (move_hyper)
    for (Eigen::Index i = 0; i < k; ++i) res.rhat_hyper[i] = rhat_of(res.hyper, i);
  return res;
}

}  // namespace heatsvc
