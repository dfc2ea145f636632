#pragma once

#include <openssl/evp.h>

#include <Eigen/Core>

#include <array>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "heatsvc/csv.hpp"
#include "heatsvc/error.hpp"
#include "heatsvc/metrics.hpp"
#include "heatsvc/modifiers.hpp"
#include "heatsvc/pipeline.hpp"

namespace heatsvc {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// checksums

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw NumericError("SHA-256 initialisation failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw NumericError("SHA-256 update failed");
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md.data(), &len) != 1) throw NumericError("SHA-256 finalisation failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return out.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(const std::string& text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return h.hex();
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

/// Checksums of the regular files directly inside `dir`, keyed by name.
/// Run manifests are skipped since they carry wall-clock timings.
inline std::map<std::string, std::string> directory_checksums(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "run_manifest.json") out[e.path().filename().string()] = sha256_file(e.path());
  return out;
}

// ---------------------------------------------------------------------------
// json helpers

using nlohmann::json;

inline json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Summary& s) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return json{{"median", num(s.median)}, {"lower", num(s.lower)}, {"upper", num(s.upper)}};
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline json basis_json(const SplineBasis& b) {
  const auto& k = b.knots();
  const auto& c = b.center_row();
  return json{{"boundary", {k.boundary[0], k.boundary[1]}},
              {"interior", {k.interior[0], k.interior[1], k.interior[2]}},
              {"reference", b.reference()},
              {"center_row", {c[0], c[1], c[2], c[3]}}};
}

inline SplineBasis basis_from_json(const json& j) {
  try {
    KnotSet k;
    k.boundary = {j.at("boundary").at(0).get<double>(), j.at("boundary").at(1).get<double>()};
    k.interior = {j.at("interior").at(0).get<double>(), j.at("interior").at(1).get<double>(), j.at("interior").at(2).get<double>()};
    return SplineBasis(k, j.at("reference").get<double>());
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed basis definition: ") + e.what());
  }
}

inline json layout_json(const LatentLayout& l) {
  json blocks = json::object();
  blocks["intercept"] = {0, 1};
  blocks["beta"] = {LatentLayout::beta(0), kSplineCols};
  blocks["gamma"] = {LatentLayout::gamma(0), kCalendarCols};
  for (int j = 0; j < 4; ++j) {
    blocks["beta_prime_" + std::to_string(j + 1)] = {l.field(j), l.n_areas};
    blocks["beta_prime_" + std::to_string(j + 1) + "_icar"] = {l.icar(j), l.n_areas};
  }
  blocks["b"] = {l.field(4), l.n_areas};
  blocks["b_icar"] = {l.icar(4), l.n_areas};
  blocks["omega"] = {l.omega(), kSummerDays};
  blocks["delta"] = {l.delta(), l.n_years};
  if (l.interactions) {
    blocks["xi"] = {l.xi(), static_cast<Eigen::Index>(l.n_years) * l.n_areas};
    blocks["eta"] = {l.eta(), static_cast<Eigen::Index>(kSummerDays) * l.n_areas};
  }
  return json{{"n_areas", l.n_areas}, {"n_years", l.n_years}, {"interactions", l.interactions}, {"size", l.size()}, {"blocks", blocks}};
}

// ---------------------------------------------------------------------------
// fit outputs

inline json fit_report_json(const FitResult& r, const Study& s, const FitSettings& settings, const std::string& config_hash) {
  json j;
  json theta = json::object();
  for (std::size_t i = 0; i < r.hyper_names.size(); ++i) theta[r.hyper_names[i]] = r.optimizer.theta[static_cast<Eigen::Index>(i)];
  j["theta_star"] = theta;
  const Hyperparameters& h = r.hyper;
  j["hyperparameters"] = {{"sigma_beta", h.sigma_beta}, {"phi_beta", h.phi_beta}, {"sigma_b", h.sigma_b}, {"phi_b", h.phi_b},
                          {"sigma_omega", h.sigma_omega}, {"sigma_delta", h.sigma_delta}};
  if (r.layout.interactions) {
    j["hyperparameters"]["sigma_xi"] = h.sigma_xi;
    j["hyperparameters"]["sigma_eta"] = h.sigma_eta;
  }
  json trace = json::array();
  for (const auto& t : r.optimizer.trace)
    trace.push_back({{"theta", to_json(t.theta)}, {"log_marginal", std::isfinite(t.value) ? json(t.value) : json(nullptr)}});
  j["search_trace"] = trace;
  j["log_marginal"] = {{"value", r.at_mode.value},
                       {"loglik", r.at_mode.loglik},
                       {"quad", r.at_mode.quad},
                       {"logdet_prior", r.at_mode.logdet_prior},
                       {"logdet_posterior", r.at_mode.logdet_post},
                       {"log_hyperprior", r.at_mode.log_hyperprior}};
  j["diagnostics"] = {{"optimizer_converged", r.optimizer.converged},
                      {"optimizer_evaluations", r.optimizer.evaluations},
                      {"optimizer_warning", r.optimizer.warning},
                      {"newton_iterations", r.newton.iterations},
                      {"newton_gradient_trace", r.newton.trace},
                      {"final_gradient_norm", r.newton.grad_norm}};
  j["seeds"] = {{"draws", r.draws.seed}};
  j["strategy"] = r.draws.strategy;
  j["n_draws"] = r.draws.n_draws();
  j["basis"] = basis_json(s.basis);
  j["bym2_scaling"] = s.structure.kappa;
  j["layout"] = layout_json(r.layout);
  j["priors"] = {{"pc_sd_svc", {settings.model.priors.sd_svc.u, settings.model.priors.sd_svc.alpha}},
                 {"pc_sd_spatial", {settings.model.priors.sd_spatial.u, settings.model.priors.sd_spatial.alpha}},
                 {"pc_sd_year", {settings.model.priors.sd_year.u, settings.model.priors.sd_year.alpha}},
                 {"pc_sd_season", {settings.model.priors.sd_season.u, settings.model.priors.sd_season.alpha}},
                 {"pc_sd_interaction", {settings.model.priors.sd_interaction.u, settings.model.priors.sd_interaction.alpha}},
                 {"pc_phi", {settings.model.priors.phi.u, settings.model.priors.phi.alpha}},
                 {"intercept_variance", settings.model.priors.intercept_variance},
                 {"fixed_variance", settings.model.priors.fixed_variance}};
  j["ingest"] = {{"rows", s.ingest.rows}, {"zero_population_rows", s.ingest.zero_population_rows}, {"missing_death_rows", s.ingest.missing_death_rows}};
  j["config_hash"] = config_hash;
  return j;
}

/// Raw little-endian float64 in column-major order.
inline void write_matrix_bin(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  static_assert(std::endian::native == std::endian::little, "draw files are written little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw InputError("failed writing " + path.string());
}

inline Eigen::MatrixXd read_matrix_bin(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  const auto expect = static_cast<std::uintmax_t>(rows * cols) * sizeof(double);
  if (std::filesystem::file_size(path) != expect)
    throw InputError(path.string() + ": size does not match the " + std::to_string(rows) + " x " + std::to_string(cols) + " manifest");
  Eigen::MatrixXd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expect));
  if (!in) throw InputError("failed reading " + path.string());
  return m;
}

/// fit_report.json, draws.bin (latent), hyper_draws.bin and draws_manifest.json.
inline void write_fit(const std::filesystem::path& dir, const FitResult& r, const Study& s, const FitSettings& settings,
                      const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  write_json(dir / "fit_report.json", fit_report_json(r, s, settings, config_hash));
  write_matrix_bin(dir / "draws.bin", r.draws.latent);
  write_matrix_bin(dir / "hyper_draws.bin", r.draws.hyper);
  json m;
  m["format"] = "float64 little-endian, column-major, one column per draw";
  m["latent"] = {{"file", "draws.bin"}, {"rows", r.draws.latent.rows()}, {"cols", r.draws.latent.cols()}, {"sha256", sha256_file(dir / "draws.bin")}};
  m["hyper"] = {{"file", "hyper_draws.bin"}, {"rows", r.draws.hyper.rows()}, {"cols", r.draws.hyper.cols()}, {"names", r.hyper_names},
                {"sha256", sha256_file(dir / "hyper_draws.bin")}};
  m["layout"] = layout_json(r.layout);
  m["seed"] = r.draws.seed;
  m["config_hash"] = config_hash;
  write_json(dir / "draws_manifest.json", m);
}

struct LoadedFit {
  Eigen::MatrixXd latent;
  LatentLayout layout;
  SplineBasis basis;
  std::uint64_t seed = 0;
  std::string config_hash;
  json report;
};

inline LoadedFit load_fit(const std::filesystem::path& dir) {
  LoadedFit f;
  const json m = read_json(dir / "draws_manifest.json");
  f.report = read_json(dir / "fit_report.json");
  try {
    const json& l = m.at("layout");
    f.layout = LatentLayout(l.at("n_areas").get<int>(), l.at("n_years").get<int>(), l.at("interactions").get<bool>());
    const auto rows = m.at("latent").at("rows").get<Eigen::Index>(), cols = m.at("latent").at("cols").get<Eigen::Index>();
    if (rows != f.layout.size()) throw InputError(dir.string() + ": draw rows do not match the latent layout");
    const auto file = dir / m.at("latent").at("file").get<std::string>();
    if (sha256_file(file) != m.at("latent").at("sha256").get<std::string>()) throw InputError(file.string() + ": checksum mismatch");
    f.latent = read_matrix_bin(file, rows, cols);
    f.seed = m.at("seed").get<std::uint64_t>();
    f.config_hash = m.at("config_hash").get<std::string>();
    f.basis = basis_from_json(f.report.at("basis"));
  } catch (const json::exception& e) {
    throw InputError(dir.string() + ": malformed draw manifest: " + e.what());
  }
  return f;
}

// ---------------------------------------------------------------------------
// run manifest

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  int threads = 1;
  std::map<std::string, std::map<std::string, std::string>> inputs;  // directory label -> file -> sha256
  std::vector<std::pair<std::string, double>> timings;
  std::vector<std::string> sensitivity;

  json to_json() const {
    json t = json::object();
    for (const auto& [k, v] : timings) t[k] = v;
    return json{{"command", command},
                {"config_hash", config_hash},
                {"seed", seed},
                {"threads", threads},
                {"sensitivity", sensitivity},
                {"inputs", inputs},
                {"versions", {{"heatsvc", kVersion},
                              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                            std::to_string(EIGEN_MINOR_VERSION)},
                              {"compiler", __VERSION__},
                              {"cxx_standard", __cplusplus}}},
                {"timings_seconds", t}};
  }
};

inline void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  std::filesystem::create_directories(dir);
  write_json(dir / "run_manifest.json", m.to_json());
}

// ---------------------------------------------------------------------------
// plot-ready tables

inline void write_rr_curves(const std::filesystem::path& path, const MetricsResult& r) {
  csv::Writer w(path);
  w.header({"area_id", "temperature", "logrr_median", "logrr_lower", "logrr_upper", "rr_median", "rr_lower", "rr_upper"});
  for (std::size_t m = 0; m < r.areas.size(); ++m) {
    const CurveSummary& c = r.areas[m].curve;
    for (std::size_t i = 0; i < r.grid.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      w.row(m, r.grid[i], c.median[k], c.lower[k], c.upper[k], std::exp(c.median[k]), std::exp(c.lower[k]), std::exp(c.upper[k]));
    }
  }
  w.close();
}

inline std::string num_or_empty(double v) { return std::isfinite(v) ? csv::fmt(v) : std::string(); }

inline void write_metrics_table(const std::filesystem::path& path, const MetricsResult& r, const std::vector<DeathHistogram>& hist) {
  csv::Writer w(path);
  w.header({"area_id", "population", "deaths", "mmt_median", "mmt_lower", "mmt_upper", "mmp_median", "mmp_lower", "mmp_upper",
            "ech_median", "ech_lower", "ech_upper", "erh_median", "erh_lower", "erh_upper", "afh_median", "afh_lower", "afh_upper",
            "erh_exceedance", "mmt_fallbacks"});
  for (std::size_t m = 0; m < r.areas.size(); ++m) {
    const AreaMetrics& a = r.areas[m];
    std::vector<std::string> f = {std::to_string(m), csv::fmt(hist[m].population), csv::fmt(hist[m].total)};
    for (const Summary* s : {&a.mmt_summary, &a.mmp_summary, &a.ech_summary, &a.erh_summary, &a.afh_summary}) {
      f.push_back(num_or_empty(s->median));
      f.push_back(num_or_empty(s->lower));
      f.push_back(num_or_empty(s->upper));
    }
    f.push_back(csv::fmt(r.erh_exceedance[m]));
    f.push_back(std::to_string(a.fallbacks));
    w.fields(f);
  }
  w.close();
}

inline void write_canton_curves(const std::filesystem::path& path, const std::vector<const AggregationResult*>& results,
                                const std::vector<double>& grid) {
  csv::Writer w(path);
  w.header({"scheme", "canton_id", "temperature", "logrr_median", "logrr_lower", "logrr_upper"});
  auto emit = [&](const AggregationResult& a, const std::string& id, const CurveSummary& c) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      w.row(std::string(scheme_name(a.scheme)), id, grid[i], c.median[k], c.lower[k], c.upper[k]);
    }
  };
  for (const AggregationResult* a : results) {
    for (const auto& c : a->cantons) emit(*a, std::to_string(c.canton), c.metrics.curve);
    emit(*a, "national", a->national_population.curve);
  }
  w.close();
}

inline void write_canton_summary(const std::filesystem::path& path, const std::vector<const AggregationResult*>& results) {
  csv::Writer w(path);
  w.header({"scheme", "canton_id", "areas", "mmt_median", "mmt_lower", "mmt_upper", "heat_rr_median", "heat_rr_lower", "heat_rr_upper",
            "heat_rr_exceedance"});
  for (const AggregationResult* a : results)
    for (const auto& c : a->cantons)
      w.fields({scheme_name(a->scheme), std::to_string(c.canton), std::to_string(a->weights[static_cast<std::size_t>(c.canton)].areas.size()),
                num_or_empty(c.metrics.mmt_summary.median), num_or_empty(c.metrics.mmt_summary.lower), num_or_empty(c.metrics.mmt_summary.upper),
                num_or_empty(c.heat_rr_summary.median), num_or_empty(c.heat_rr_summary.lower), num_or_empty(c.heat_rr_summary.upper),
                num_or_empty(c.heat_rr_exceedance)});
  w.close();
}

/// National totals per draw: excess deaths summed over areas and the
/// share of all deaths they represent.
struct NationalBurden {
  Summary ech;
  Summary afh;
  Summary erh;
  double deaths = 0.0;
  double population = 0.0;
};

inline NationalBurden national_burden(const MetricsResult& r, const std::vector<DeathHistogram>& hist) {
  NationalBurden nb;
  for (const auto& h : hist) {
    nb.deaths += h.total;
    nb.population += h.population;
  }
  const std::size_t d = r.areas.empty() ? 0 : r.areas.front().ech.size();
  std::vector<double> ech(d, 0.0), afh(d), erh(d);
  for (const auto& a : r.areas)
    for (std::size_t k = 0; k < d; ++k) ech[k] += a.ech[k];
  for (std::size_t k = 0; k < d; ++k) {
    afh[k] = nb.deaths > 0.0 ? ech[k] / nb.deaths : kNaN;
    erh[k] = ech[k] / nb.population * kPerThousand;
  }
  nb.ech = summarize(ech);
  nb.afh = summarize(afh);
  nb.erh = summarize(erh);
  return nb;
}

}  // namespace heatsvc
