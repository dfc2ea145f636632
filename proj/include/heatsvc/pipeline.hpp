#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "heatsvc/config.hpp"
#include "heatsvc/graph.hpp"
#include "heatsvc/ingest.hpp"
#include "heatsvc/laplace.hpp"
#include "heatsvc/latent_model.hpp"
#include "heatsvc/metrics.hpp"
#include "heatsvc/modifiers.hpp"
#include "heatsvc/spline.hpp"

namespace heatsvc {

/// Optional analysis variants: (i) inverse-variance canton weights,
/// (ii) PC(1, 0.01) on the seasonal SD, (iii) year x area and day x area
/// residual blocks.
struct Sensitivity {
  bool variance_weights = false;
  bool loose_seasonality = false;
  bool interactions = false;

  void enable(const std::string& code) {
    if (code == "i")
      variance_weights = true;
    else if (code == "ii")
      loose_seasonality = true;
    else if (code == "iii")
      interactions = true;
    else
      throw InputError("unknown sensitivity analysis '" + code + "' (expected i, ii or iii)");
  }

  std::vector<std::string> codes() const {
    std::vector<std::string> v;
    if (variance_weights) v.push_back("i");
    if (loose_seasonality) v.push_back("ii");
    if (interactions) v.push_back("iii");
    return v;
  }
};

struct FitSettings {
  ModelConfig model;
  NelderMeadOptions optimizer;
  DrawOptions draws;
  std::string weight_scheme = "population";
  int propagate_samples = 200;

  void apply(const Sensitivity& s) {
    if (s.loose_seasonality) model.priors.sd_season = PcPair{1.0, 0.01};
    if (s.interactions) model.interactions = true;
    if (s.variance_weights) weight_scheme = "variance";
  }

  static FitSettings from(const Config& c) {
    FitSettings s;
    auto pair = [&](const char* key, PcPair& p) {
      const auto v = c.get_doubles(key, {p.u, p.alpha});
      if (v.size() != 2) throw InputError(c.source() + ": '" + key + "' needs two values (U, alpha)");
      p = PcPair{v[0], v[1]};
    };
    auto& pr = s.model.priors;
    s.model.reference_temp = c.get_double("reference_temp", s.model.reference_temp);
    pair("pc_sd_svc", pr.sd_svc);
    pair("pc_sd_spatial", pr.sd_spatial);
    pair("pc_sd_year", pr.sd_year);
    pair("pc_sd_season", pr.sd_season);
    pair("pc_sd_interaction", pr.sd_interaction);
    pair("pc_phi", pr.phi);
    pr.intercept_variance = c.get_double("intercept_variance", pr.intercept_variance);
    pr.fixed_variance = c.get_double("fixed_variance", pr.fixed_variance);
    pr.validate();
    s.model.interactions = c.get_bool("interactions", false);
    const std::string season = c.get_string("seasonality_prior", "default");
    if (season == "loose")
      pr.sd_season = PcPair{1.0, 0.01};
    else if (season != "default")
      throw InputError(c.source() + ": seasonality_prior must be 'default' or 'loose'");

    s.optimizer.max_evaluations = static_cast<int>(c.get_int("optimizer_max_evaluations", s.optimizer.max_evaluations));
    s.optimizer.f_tol = c.get_double("optimizer_f_tol", s.optimizer.f_tol);
    s.optimizer.x_tol = c.get_double("optimizer_x_tol", s.optimizer.x_tol);
    s.draws.n_draws = static_cast<int>(c.get_int("draws", s.draws.n_draws));
    s.draws.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(s.draws.seed)));
    const std::string strategy = c.get_string("strategy", "empirical_bayes");
    if (strategy == "grid")
      s.draws.grid = true;
    else if (strategy != "empirical_bayes")
      throw InputError(c.source() + ": strategy must be 'empirical_bayes' or 'grid'");
    s.weight_scheme = c.get_string("weight_scheme", s.weight_scheme);
    parse_scheme(s.weight_scheme);
    s.propagate_samples = static_cast<int>(c.get_int("propagate_samples", s.propagate_samples));
    if (s.draws.n_draws < 1) throw InputError(c.source() + ": draws must be positive");
    if (s.propagate_samples < 2) throw InputError(c.source() + ": propagate_samples must be at least 2");
    return s;
  }
};

/// Everything the model needs from a data directory.
struct Study {
  RawDataset data;
  IngestReport ingest;
  AnalysisTable table;
  AreaGraph graph;
  ScaledStructure structure;
  SplineBasis basis;
};

inline Study load_study(const std::filesystem::path& dir, double reference_temp) {
  Study s;
  s.data = read_dataset(dir);
  s.table = assemble_table(s.data, &s.ingest);
  s.graph = graph_of(s.data);
  s.structure = bym2_scaling(s.graph);
  s.basis = SplineBasis(knots_from_quantiles(s.table.exposure), reference_temp);
  return s;
}

struct FitResult {
  LatentLayout layout;
  std::vector<std::string> hyper_names;
  Hyperparameters hyper;
  OptimizeResult optimizer;
  MarginalResult at_mode;
  ModeResult newton;
  PosteriorDraws draws;
  std::vector<std::pair<std::string, double>> timings;  // seconds per stage
};

class StageTimer {
 public:
  using sink_type = std::vector<std::pair<std::string, double>>;

  explicit StageTimer(sink_type& sink) : sink_(sink), t_(std::chrono::steady_clock::now()) {}
  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    sink_.emplace_back(stage, std::chrono::duration<double>(now - t_).count());
    t_ = now;
  }

 private:
  sink_type& sink_;
  std::chrono::steady_clock::time_point t_;
};

/// Empirical-Bayes (or grid) Laplace fit followed by posterior draws.
inline FitResult fit_model(const AnalysisTable& table, const SplineBasis& basis, const ScaledStructure& structure, const FitSettings& s) {
  FitResult r;
  StageTimer timer(r.timings);
  const SvcPoissonModel model(table, basis, structure, s.model);
  const LaplaceEngine<SvcPoissonModel> eng(model);
  r.layout = model.layout();
  r.hyper_names = model.hyper_names();
  timer.lap("assemble");
  r.optimizer = optimize_hyper(eng, model.initial_hyper(), s.optimizer);
  if (!std::isfinite(r.optimizer.value)) throw NumericError("hyperparameter search found no point with a finite log marginal");
  timer.lap("optimize");
  LaplaceWorkspace ws = eng.make_workspace();
  r.newton = eng.conditional_mode(r.optimizer.theta, ws);
  r.at_mode = eng.log_marginal(r.optimizer.theta, ws, &r.newton.x);
  r.hyper = model.from_internal(r.optimizer.theta);
  r.draws = draw_posterior(eng, r.optimizer.theta, s.draws);
  timer.lap("draws");
  return r;
}

}  // namespace heatsvc
