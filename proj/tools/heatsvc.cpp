#include <omp.h>

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "heatsvc/heatsvc.hpp"

using namespace heatsvc;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string out;
};

Config load_config(const std::string& path) { return path.empty() ? Config() : Config::load(path); }

void set_threads(int threads) {
  if (threads < 0) throw InputError("--threads must be non-negative");
  if (threads > 0) omp_set_num_threads(threads);
}

int effective_threads() { return omp_get_max_threads(); }

/// Fit outputs plus the matching study and evaluation grid.
struct Analysis {
  LoadedFit fit;
  Study study;
  CurveEvaluator ev;
  Config settings;
  std::string fit_dir;

  static Analysis open(const std::string& fit_dir, const std::string& data_dir) {
    LoadedFit fit = load_fit(fit_dir);
    Study study = load_study(data_dir, fit.basis.reference());
    if (study.table.n_areas != fit.layout.n_areas || study.table.n_years() != fit.layout.n_years)
      throw InputError("data directory " + data_dir + " does not match the fit in " + fit_dir);
    const json rm = read_json(fs::path(fit_dir) / "run_manifest.json");
    if (rm.contains("inputs") && rm["inputs"].contains("data")) {
      const auto now = directory_checksums(data_dir);
      for (const auto& [name, sum] : rm["inputs"]["data"].items()) {
        auto it = now.find(name);
        if (it == now.end() || it->second != sum.get<std::string>())
          throw InputError("data file " + name + " differs from the one the fit in " + fit_dir + " was run on");
      }
    }
    CurveEvaluator ev(fit.basis);
    Config settings = Config::load(fs::path(fit_dir) / "settings.cfg");
    return Analysis{std::move(fit), std::move(study), std::move(ev), std::move(settings), fit_dir};
  }

  FitSettings fit_settings() const { return FitSettings::from(settings); }
};

RunManifest manifest_for(const std::string& command, const std::string& config_hash, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config_hash = config_hash;
  m.seed = seed;
  m.threads = effective_threads();
  return m;
}

// ---------------------------------------------------------------------------

void run_simulate(const Common& c) {
  Config cfg = load_config(c.config);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  StageTimer::sink_type timings;
  StageTimer timer(timings);
  const SimConfig sc = SimConfig::from(cfg);
  cfg.reject_unused();
  const Simulation sim = simulate(sc);
  timer.lap("simulate");
  fs::create_directories(c.out);
  write_simulation(c.out, sim);
  timer.lap("write");
  RunManifest m = manifest_for("simulate", sha256_hex(cfg.canonical()), sc.seed);
  if (!c.config.empty()) m.inputs["config"] = {{fs::path(c.config).filename().string(), sha256_file(c.config)}};
  m.timings = timings;
  write_run_manifest(c.out, m);
  std::cout << "simulated " << sim.data.n_areas << " areas x " << sim.table.size() / static_cast<std::size_t>(sim.data.n_areas)
            << " days into " << c.out << '\n';
}

void run_fit(const Common& c, const std::string& data, std::optional<int> draws, const std::vector<std::string>& sensitivity,
             const std::string& seasonality) {
  Config cfg = load_config(c.config);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (draws) cfg.set("draws", std::to_string(*draws));
  Sensitivity sens;
  for (const auto& s : sensitivity) sens.enable(s);
  if (!seasonality.empty()) {
    if (seasonality != "loose" && seasonality != "default") throw InputError("--seasonality-prior must be 'default' or 'loose'");
    cfg.set("seasonality_prior", seasonality);
  }
  if (sens.loose_seasonality) cfg.set("seasonality_prior", "loose");
  if (sens.interactions) cfg.set("interactions", "true");
  if (sens.variance_weights) cfg.set("weight_scheme", "variance");
  const FitSettings settings = FitSettings::from(cfg);
  cfg.reject_unused();
  const std::string hash = sha256_hex(cfg.canonical());

  StageTimer::sink_type timings;
  StageTimer timer(timings);
  const Study study = load_study(data, settings.model.reference_temp);
  timer.lap("ingest");
  FitResult r = fit_model(study.table, study.basis, study.structure, settings);
  fs::create_directories(c.out);
  write_fit(c.out, r, study, settings, hash);
  {
    std::ofstream out(fs::path(c.out) / "settings.cfg");
    out << cfg.canonical();
    if (!out) throw InputError("cannot write settings.cfg");
  }
  timer.lap("write");
  RunManifest m = manifest_for("fit", hash, settings.draws.seed);
  m.inputs["data"] = directory_checksums(data);
  if (!c.config.empty()) m.inputs["config"] = {{fs::path(c.config).filename().string(), sha256_file(c.config)}};
  m.sensitivity = sens.codes();
  m.timings = timings;
  m.timings.insert(m.timings.begin() + 1, r.timings.begin(), r.timings.end());
  write_run_manifest(c.out, m);
  std::cout << "fit: log marginal " << r.at_mode.value << ", " << r.optimizer.evaluations << " evaluations"
            << (r.optimizer.converged ? "" : " (optimizer did not converge: " + r.optimizer.warning + ")") << ", " << r.draws.n_draws()
            << " draws written to " << c.out << '\n';
}

MetricsResult metrics_of(const Analysis& a, double threshold) {
  return compute_metrics(a.fit.latent, a.fit.layout, a.study.table, a.ev, threshold);
}

void run_metrics(const Common& c, const std::string& fit_dir, const std::string& data, double threshold) {
  StageTimer::sink_type timings;
  StageTimer timer(timings);
  const Analysis a = Analysis::open(fit_dir, data);
  const MetricsResult r = metrics_of(a, threshold);
  timer.lap("metrics");
  fs::create_directories(c.out);
  const auto hist = bin_deaths(a.study.table, a.ev.grid());
  write_rr_curves(fs::path(c.out) / "rr_curves.csv", r);
  write_metrics_table(fs::path(c.out) / "metrics.csv", r, hist);
  timer.lap("write");
  RunManifest m = manifest_for("metrics", a.fit.config_hash, a.fit.seed);
  m.inputs["data"] = directory_checksums(data);
  m.inputs["fit"] = directory_checksums(fit_dir);
  m.timings = timings;
  write_run_manifest(c.out, m);
  std::cout << "metrics for " << r.areas.size() << " areas (ERH threshold " << r.erh_threshold << ", " << r.fallbacks
            << " MMT fallbacks) written to " << c.out << '\n';
}

std::vector<WeightScheme> schemes_of(const std::string& s, const Analysis& a) {
  if (s == "both") return {WeightScheme::population, WeightScheme::variance};
  if (s.empty()) return {parse_scheme(a.fit_settings().weight_scheme)};
  return {parse_scheme(s)};
}

void run_aggregate(const Common& c, const std::string& fit_dir, const std::string& data, const std::string& scheme) {
  StageTimer::sink_type timings;
  StageTimer timer(timings);
  const Analysis a = Analysis::open(fit_dir, data);
  std::vector<AggregationResult> results;
  for (WeightScheme s : schemes_of(scheme, a))
    results.push_back(aggregate_cantons(a.fit.latent, a.fit.layout, a.study.table, a.study.graph, a.ev, s));
  timer.lap("aggregate");
  std::vector<const AggregationResult*> ptrs;
  for (const auto& r : results) ptrs.push_back(&r);
  fs::create_directories(c.out);
  write_canton_curves(fs::path(c.out) / "canton_curves.csv", ptrs, a.ev.grid());
  write_canton_summary(fs::path(c.out) / "canton_summary.csv", ptrs);
  if (results.size() == 2) {
    double diff = 0.0;
    for (std::size_t k = 0; k < results[0].cantons.size(); ++k)
      diff = std::max(diff, (results[0].cantons[k].metrics.curve.median - results[1].cantons[k].metrics.curve.median).cwiseAbs().maxCoeff());
    std::cout << "largest difference between scheme median canton curves: " << diff << " (logRR)\n";
  }
  timer.lap("write");
  RunManifest m = manifest_for("aggregate", a.fit.config_hash, a.fit.seed);
  m.inputs["data"] = directory_checksums(data);
  m.inputs["fit"] = directory_checksums(fit_dir);
  m.timings = timings;
  write_run_manifest(c.out, m);
  std::cout << "aggregated " << results.front().cantons.size() << " cantons into " << c.out << '\n';
}

struct ModifierRun {
  ModifierDesign design;
  std::optional<ModifierPosterior> median;
  std::optional<ModifierPosterior> propagated;
};

ModifierRun modifier_run(const Analysis& a, const MetricsResult& metrics, const std::string& records_path, int samples, bool median) {
  const fs::path path = records_path.empty() ? fs::path() : fs::path(records_path);
  if (path.empty()) throw InputError("no modifiers file given");
  ModifierRun run;
  run.design = standardize(align_modifiers(read_modifiers(path), a.study.table.n_areas));
  if (median) run.median = fit_median_outcome(erh_medians(metrics.areas), run.design, a.study.structure);
  if (samples > 0) {
    const Eigen::VectorXd* init = run.median ? &run.median->fits.front().theta : nullptr;
    run.propagated = propagate(erh_outcome_samples(metrics.areas, samples), run.design, a.study.structure, {}, init);
  }
  return run;
}

json modifier_json(const ModifierRun& run) {
  json j;
  auto post = [](const ModifierPosterior& p) {
    json e = json::array();
    for (const auto& x : p.effects)
      e.push_back({{"variable", x.variable}, {"median", x.median}, {"lower", x.lower}, {"upper", x.upper}, {"mean", x.mean},
                   {"sd_used", std::isnan(x.sd_used) ? json(nullptr) : json(x.sd_used)}});
    json fits = json::array();
    for (const auto& f : p.fits)
      fits.push_back({{"sigma_erh", f.sigma_erh}, {"sigma_spatial", f.sigma_spatial}, {"phi_spatial", f.phi_spatial},
                      {"sigma_canton", std::isnan(f.sigma_canton) ? json(nullptr) : json(f.sigma_canton)}, {"converged", f.converged}});
    return json{{"mode", p.mode}, {"samples", p.samples}, {"failures", p.failures}, {"failure_messages", p.failure_messages},
                {"effects", e}, {"fits", fits}};
  };
  if (run.median) j["median"] = post(*run.median);
  if (run.propagated) j["propagated"] = post(*run.propagated);
  json sd = json::object();
  for (std::size_t i = 0; i < run.design.names.size(); ++i)
    if (!std::isnan(run.design.sd[i])) sd[run.design.names[i]] = {{"mean", run.design.mean[i]}, {"sd", run.design.sd[i]}};
  j["standardization"] = sd;
  return j;
}

void run_modifiers(const Common& c, const std::string& fit_dir, const std::string& data, const std::string& records,
                   std::optional<int> propagate_n, bool median_only) {
  StageTimer::sink_type timings;
  StageTimer timer(timings);
  const Analysis a = Analysis::open(fit_dir, data);
  const MetricsResult metrics = metrics_of(a, kNaN);
  timer.lap("metrics");
  const int n = median_only ? 0 : propagate_n.value_or(a.fit_settings().propagate_samples);
  const bool median = median_only || !propagate_n;
  const ModifierRun run = modifier_run(a, metrics, records.empty() ? (fs::path(data) / "modifiers.csv").string() : records, n, median);
  timer.lap("modifiers");
  fs::create_directories(c.out);
  std::vector<const ModifierPosterior*> posts;
  if (run.median) posts.push_back(&*run.median);
  if (run.propagated) posts.push_back(&*run.propagated);
  write_modifier_effects(fs::path(c.out) / "modifier_effects.csv", posts);
  write_json(fs::path(c.out) / "modifier_fits.json", modifier_json(run));
  timer.lap("write");
  RunManifest m = manifest_for("modifiers", a.fit.config_hash, a.fit.seed);
  m.inputs["data"] = directory_checksums(data);
  m.inputs["fit"] = directory_checksums(fit_dir);
  m.timings = timings;
  write_run_manifest(c.out, m);
  if (run.propagated && run.propagated->failures > 0)
    std::cerr << "warning: " << run.propagated->failures << " of " << run.propagated->samples << " propagated fits failed\n";
  std::cout << "modifier effects written to " << c.out << '\n';
}

void run_report(const Common& c, const std::string& fit_dir, const std::string& data, const std::string& records, int propagate_n) {
  StageTimer::sink_type timings;
  StageTimer timer(timings);
  const Analysis a = Analysis::open(fit_dir, data);
  const MetricsResult metrics = metrics_of(a, kNaN);
  const auto hist = bin_deaths(a.study.table, a.ev.grid());
  timer.lap("metrics");
  const WeightScheme scheme = parse_scheme(a.fit_settings().weight_scheme);
  const AggregationResult agg = aggregate_cantons(a.fit.latent, a.fit.layout, a.study.table, a.study.graph, a.ev, scheme);
  timer.lap("aggregate");
  const fs::path recs = records.empty() ? fs::path(data) / "modifiers.csv" : fs::path(records);
  std::optional<ModifierRun> mods;
  if (fs::exists(recs)) mods = modifier_run(a, metrics, recs.string(), propagate_n, true);
  timer.lap("modifiers");

  const fs::path out(c.out);
  fs::create_directories(out);
  {
    csv::Writer w(out / "national_curve.csv");
    w.header({"temperature", "rr_median", "rr_lower", "rr_upper"});
    const CurveSummary& s = agg.national_fixed.curve;
    for (std::size_t i = 0; i < a.ev.grid().size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      w.row(a.ev.grid()[i], std::exp(s.median[k]), std::exp(s.lower[k]), std::exp(s.upper[k]));
    }
    w.close();
  }
  write_rr_curves(out / "area_curves.csv", metrics);
  write_metrics_table(out / "area_metrics.csv", metrics, hist);
  write_canton_summary(out / "canton_heat_rr.csv", {&agg});
  write_canton_curves(out / "canton_curves.csv", {&agg}, a.ev.grid());
  if (mods) {
    std::vector<const ModifierPosterior*> posts;
    if (mods->median) posts.push_back(&*mods->median);
    if (mods->propagated) posts.push_back(&*mods->propagated);
    write_modifier_effects(out / "modifier_effects.csv", posts);
    csv::Writer w(out / "modifier_distributions.csv");
    w.header({"variable", "mean", "sd"});
    for (std::size_t i = 0; i < mods->design.names.size(); ++i)
      if (!std::isnan(mods->design.sd[i])) w.row(mods->design.names[i], mods->design.mean[i], mods->design.sd[i]);
    w.close();
  }

  const NationalBurden nb = national_burden(metrics, hist);
  std::vector<double> sorted = a.study.table.exposure;
  std::sort(sorted.begin(), sorted.end());
  json j;
  j["national"] = {{"mmt", to_json(agg.national_fixed.mmt_summary)},
                   {"mmp", to_json(agg.national_fixed.mmp_summary)},
                   {"excess_deaths", to_json(nb.ech)},
                   {"afh", to_json(nb.afh)},
                   {"erh_per_1000", to_json(nb.erh)},
                   {"deaths", nb.deaths},
                   {"population", nb.population},
                   {"temperature_p01", quantile_sorted(sorted, 0.01)},
                   {"temperature_p99", quantile_sorted(sorted, 0.99)}};
  j["erh_threshold"] = metrics.erh_threshold;
  j["heat_rr_threshold"] = agg.heat_rr_threshold;
  j["weight_scheme"] = scheme_name(scheme);
  j["mmt_fallbacks"] = metrics.fallbacks;
  j["afh_missing_areas"] = metrics.afh_missing_areas;
  json cantons = json::array();
  for (const auto& cr : agg.cantons)
    cantons.push_back({{"canton_id", cr.canton}, {"heat_rr", to_json(cr.heat_rr_summary)}, {"mmt", to_json(cr.metrics.mmt_summary)},
                       {"heat_rr_exceedance", std::isnan(cr.heat_rr_exceedance) ? json(nullptr) : json(cr.heat_rr_exceedance)}});
  j["cantons"] = cantons;
  if (mods) j["modifiers"] = modifier_json(*mods);
  j["fit"] = {{"theta_star", a.fit.report.at("theta_star")}, {"diagnostics", a.fit.report.at("diagnostics")},
              {"config_hash", a.fit.config_hash}, {"seed", a.fit.seed}};
  j["tables"] = {"national_curve.csv", "area_curves.csv", "area_metrics.csv", "canton_heat_rr.csv",
                 "canton_curves.csv"};
  if (mods) {
    j["tables"].push_back("modifier_effects.csv");
    j["tables"].push_back("modifier_distributions.csv");
  }
  write_json(out / "report.json", j);
  timer.lap("write");
  RunManifest m = manifest_for("report", a.fit.config_hash, a.fit.seed);
  m.inputs["data"] = directory_checksums(data);
  m.inputs["fit"] = directory_checksums(fit_dir);
  m.timings = timings;
  write_run_manifest(out, m);
  std::cout << "report written to " << c.out << ": national excess deaths " << nb.ech.median << " [" << nb.ech.lower << ", " << nb.ech.upper
            << "]\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially varying heat-mortality analysis"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool config) {
    if (config) sub->add_option("--config", common.config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--threads", common.threads, "worker threads (default: all cores; 1 gives bit-reproducible output)");
    sub->add_option("--out", common.out, "output directory")->required();
  };

  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset with known truth");
  add_common(sim, true);
  std::uint64_t seed_value = 0;
  auto* seed_sim = sim->add_option("--seed", seed_value, "random seed (overrides the config)");

  auto* fit = app.add_subcommand("fit", "fit the model and write posterior draws");
  add_common(fit, true);
  std::string data_dir, fit_dir, records, scheme, seasonality;
  int draws_value = 0, propagate_value = 0;
  std::vector<std::string> sensitivity;
  fit->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  auto* seed_fit = fit->add_option("--seed", seed_value, "seed for posterior draws");
  auto* draws_opt = fit->add_option("--draws", draws_value, "number of posterior draws")->check(CLI::PositiveNumber);
  fit->add_option("--sensitivity", sensitivity, "sensitivity analyses to enable: i, ii, iii")->check(CLI::IsMember({"i", "ii", "iii"}));
  fit->add_option("--seasonality-prior", seasonality, "default or loose")->check(CLI::IsMember({"default", "loose"}));

  auto* met = app.add_subcommand("metrics", "MMT, MMP and heat burden per area");
  add_common(met, false);
  double threshold = kNaN;
  met->add_option("--fit", fit_dir, "fit output directory")->required()->check(CLI::ExistingDirectory);
  met->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  met->add_option("--threshold", threshold, "ERH exceedance threshold (default: mean of area medians)");

  auto* agg = app.add_subcommand("aggregate", "canton-level curves");
  add_common(agg, false);
  agg->add_option("--fit", fit_dir, "fit output directory")->required()->check(CLI::ExistingDirectory);
  agg->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  agg->add_option("--scheme", scheme, "population, variance or both")->check(CLI::IsMember({"population", "variance", "both"}));

  auto* mod = app.add_subcommand("modifiers", "regress ERH on area-level modifiers");
  add_common(mod, false);
  bool median_flag = false;
  mod->add_option("--fit", fit_dir, "fit output directory")->required()->check(CLI::ExistingDirectory);
  mod->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  mod->add_option("--modifiers", records, "modifiers.csv (default: the one in --data)");
  auto* prop_opt = mod->add_option("--propagate", propagate_value, "number of outcome samples to propagate")->check(CLI::Range(2, 100000));
  auto* median_opt = mod->add_flag("--median", median_flag, "fit the posterior median ERH only");
  median_opt->excludes(prop_opt);

  auto* rep = app.add_subcommand("report", "JSON and CSV bundle of the main results");
  add_common(rep, false);
  int report_propagate = 200;
  rep->add_option("--fit", fit_dir, "fit output directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--modifiers", records, "modifiers.csv (default: the one in --data)");
  rep->add_option("--propagate", report_propagate, "number of outcome samples to propagate (0 to skip)")->check(CLI::Range(0, 100000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    set_threads(common.threads);
    if (*sim) {
      if (*seed_sim) common.seed = seed_value;
      run_simulate(common);
    } else if (*fit) {
      if (*seed_fit) common.seed = seed_value;
      run_fit(common, data_dir, *draws_opt ? std::optional<int>(draws_value) : std::nullopt, sensitivity, seasonality);
    } else if (*met) {
      run_metrics(common, fit_dir, data_dir, threshold);
    } else if (*agg) {
      run_aggregate(common, fit_dir, data_dir, scheme);
    } else if (*mod) {
      run_modifiers(common, fit_dir, data_dir, records, *prop_opt ? std::optional<int>(propagate_value) : std::nullopt, median_flag);
    } else if (*rep) {
      run_report(common, fit_dir, data_dir, records, report_propagate);
    }
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
