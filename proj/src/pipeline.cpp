#include "effpot/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>

#include "effpot/csv.hpp"
#include "effpot/parallel.hpp"
#include "effpot/rng.hpp"

namespace effpot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "effpot 0.1.0";

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw ConfigError("config field '" + field + "': " + why);
}

double get_num(const json& j, const std::string& field, double fallback, bool required = false) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) {
    if (required) bad_field(field, "missing");
    return fallback;
  }
  if (!it->is_number()) bad_field(field, "must be a number");
  return it->get<double>();
}

long long get_int(const json& j, const std::string& field, long long fallback,
                  bool required = false) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) {
    if (required) bad_field(field, "missing");
    return fallback;
  }
  if (!it->is_number()) bad_field(field, "must be an integer");
  double v = it->get<double>();
  long long n = static_cast<long long>(v);
  if (static_cast<double>(n) != v) bad_field(field, "must be an integer");
  return n;
}

std::string get_str(const json& j, const std::string& field, const std::string& fallback,
                    bool required = false) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) {
    if (required) bad_field(field, "missing");
    return fallback;
  }
  if (!it->is_string()) bad_field(field, "must be a string");
  return it->get<std::string>();
}

Vec get_vec(const json& j, const std::string& field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return Vec();
  if (!it->is_array()) bad_field(field, "must be an array of numbers");
  std::vector<double> v = it->get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Mat get_mat(const json& j, const std::string& field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return Mat();
  if (it->is_number()) {
    Mat m(1, 1);
    m(0, 0) = it->get<double>();
    return m;
  }
  if (!it->is_array()) bad_field(field, "must be a matrix (array of rows) or scalar");
  auto rows = it->get<std::vector<std::vector<double>>>();
  const int n = static_cast<int>(rows.size());
  Mat m(n, n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != n) {
      bad_field(field, "must be square");
    }
    for (int c = 0; c < n; ++c) m(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  }
  return m;
}

BuiltinSpec parse_potential(const json& j, const std::string& prefix) {
  if (!j.is_object()) bad_field(prefix, "must be an object");
  BuiltinSpec spec;
  spec.kind = builtin_kind_from_string(get_str(j, "kind", "", true));
  if (j.contains("params")) {
    if (!j.at("params").is_object()) bad_field(prefix + ".params", "must be an object");
    for (auto& [k, v] : j.at("params").items()) {
      if (!v.is_number()) bad_field(prefix + ".params." + k, "must be a number");
      spec.params[k] = v.get<double>();
    }
  }
  return spec;
}

class ManifestBuilder {
 public:
  explicit ManifestBuilder(const RunConfig& config) : out_dir_(config.out_dir) {
    j_["version"] = kVersion;
    j_["compiler"] = __VERSION__;
    j_["command"] = config.pipeline;
    j_["seed"] = config.seed;
    j_["config"] = config.raw;
    j_["warnings"] = json::array();
    j_["outputs"] = json::array();
    j_["job_seeds"] = json::object();
    j_["timings"] = json::object();
  }

  void warn(const std::string& msg) { j_["warnings"].push_back(msg); }

  void job_seeds(const std::string& group, const std::vector<std::uint64_t>& seeds) {
    j_["job_seeds"][group] = seeds;
  }

  void set(const std::string& key, json value) { j_[key] = std::move(value); }

  void record_output(const fs::path& file) {
    json entry;
    entry["path"] = fs::relative(file, out_dir_).generic_string();
    entry["bytes"] = static_cast<std::uint64_t>(fs::file_size(file));
    j_["outputs"].push_back(entry);
  }

  template <class F>
  auto stage(const std::string& name, F&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      auto t1 = std::chrono::steady_clock::now();
      j_["timings"][name] = std::chrono::duration<double>(t1 - t0).count();
    } else {
      auto result = fn();
      auto t1 = std::chrono::steady_clock::now();
      j_["timings"][name] = std::chrono::duration<double>(t1 - t0).count();
      return result;
    }
  }

  void write() {
    std::ofstream out(out_dir_ / "manifest.json");
    out << j_.dump(2) << "\n";
  }

 private:
  fs::path out_dir_;
  json j_;
};

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << "\n";
}

int resolve_jobs(const RunConfig& config) {
  if (config.jobs > 0) return config.jobs;
  if (const char* env = std::getenv("EFFPOT_JOBS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return default_jobs();
}

int default_bins(int d) { return d == 1 ? 200 : 80; }

}  // namespace

BuiltinPotential build_potential(const RunConfig& config) { return make_builtin(config.potential); }

OraclePtr resolve_oracle(const BuiltinPotential& built, const std::optional<std::string>& component) {
  if (!component || component->empty() || *component == "full") return built.full;
  return built.component(*component);
}

RunConfig load_config(const fs::path& path, const std::string& command,
                      const std::optional<std::string>& out_override,
                      const std::optional<std::uint64_t>& seed_override,
                      const std::optional<int>& jobs_override) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("config file not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }

  RunConfig cfg;
  cfg.pipeline = get_str(j, "pipeline", command);
  if (cfg.pipeline != command) {
    bad_field("pipeline", "config is for '" + cfg.pipeline + "' but command is '" + command + "'");
  }
  cfg.seed = static_cast<std::uint64_t>(get_int(j, "seed", 0));
  if (seed_override) cfg.seed = *seed_override;
  std::string out = get_str(j, "out_dir", "", true);
  if (out_override) out = *out_override;
  if (out.empty()) bad_field("out_dir", "must not be empty");
  cfg.out_dir = out;
  cfg.jobs = static_cast<int>(get_int(j, "jobs", 0));
  if (jobs_override) cfg.jobs = *jobs_override;
  if (cfg.jobs < 0) bad_field("jobs", "must be >= 0");

  if (!j.contains("potential")) bad_field("potential", "missing");
  cfg.potential = parse_potential(j.at("potential"), "potential");
  std::string comp = get_str(j.at("potential"), "component", "");
  if (!comp.empty()) cfg.component = comp;

  const json sim = j.value("sim", json::object());
  cfg.delta = get_num(sim, "delta", 0.0);
  cfg.gamma = get_num(sim, "gamma", 0.1);
  cfg.n_steps = get_int(sim, "n_steps", 0);
  cfg.burn_in = get_int(sim, "burn_in", -1);
  cfg.subsample = get_int(sim, "subsample", 1);
  cfg.init_q = get_vec(sim, "init_q");
  cfg.init_p = get_vec(sim, "init_p");
  cfg.dump_trajectory = sim.value("dump_trajectory", false);

  const json fitj = j.value("fit", json::object());
  cfg.bins = static_cast<int>(get_int(fitj, "bins", 0));
  cfg.fit.basis_size = static_cast<int>(get_int(fitj, "basis_size", 30));
  cfg.fit.bin_floor = get_int(fitj, "bin_floor", 5);
  cfg.fit.smooth_passes = static_cast<int>(get_int(fitj, "smooth_passes", 1));
  cfg.normality_threshold = get_num(fitj, "normality_threshold", 0.01);

  const json covj = j.value("covariance", json::object());
  cfg.cov_file = get_str(covj, "file", "covariance.json");
  cfg.cov_n_steps = get_int(covj, "n_steps", 0);
  cfg.cov_gamma = get_num(covj, "gamma", 0.0);
  Mat sigma = get_mat(covj, "injected_sigma");
  if (sigma.size() > 0) cfg.injected_sigma = sigma;

  if (j.contains("scan")) {
    auto deltas = j.at("scan").value("deltas", std::vector<double>{});
    cfg.scan_deltas = deltas;
  }

  const json sj = j.value("surrogate", json::object());
  cfg.surrogate.fit_file = get_str(sj, "fit_file", "");
  cfg.surrogate.mode = get_str(sj, "mode", "langevin");
  cfg.surrogate.n_traj = static_cast<int>(get_int(sj, "n_traj", 500));
  cfg.surrogate.horizon = get_num(sj, "horizon", 50.0);
  cfg.surrogate.step = get_num(sj, "step", 0.1);
  cfg.surrogate.full_step = get_num(sj, "full_step", 5e-4);
  cfg.surrogate.store_dt = get_num(sj, "store_dt", 0.0);
  cfg.surrogate.max_lag = get_num(sj, "max_lag", 10.0);
  Mat fr = get_mat(sj, "friction");
  if (fr.size() > 0) cfg.surrogate.friction = fr;
  if (sj.contains("beta_hat") && !sj.at("beta_hat").is_null()) {
    cfg.surrogate.beta_hat = get_num(sj, "beta_hat", 0.0, true);
  }
  if (sj.contains("init_q")) cfg.surrogate.init_q = sj.at("init_q");
  if (sj.contains("init_p")) cfg.surrogate.init_p = sj.at("init_p");
  cfg.surrogate.equilibrium_window = get_num(sj, "equilibrium_window", 0.5);
  cfg.surrogate.equilibrium_bins = static_cast<int>(get_int(sj, "equilibrium_bins", 200));
  cfg.surrogate.couple_noise = sj.value("couple_noise", true);
  cfg.surrogate.dump_trajectories = static_cast<int>(get_int(sj, "dump_trajectories", 0));
  if (sj.contains("reference")) {
    cfg.surrogate.reference = parse_potential(sj.at("reference"), "surrogate.reference");
    std::string rc = get_str(sj.at("reference"), "component", "");
    if (!rc.empty()) cfg.surrogate.reference_component = rc;
  }

  // ---- validation (no outputs are written before this point) ----
  BuiltinPotential built = make_builtin(cfg.potential);
  OraclePtr oracle = resolve_oracle(built, cfg.component);
  const int d = oracle->dim();

  if (cfg.init_q.size() != 0 && cfg.init_q.size() != d) bad_field("sim.init_q", "wrong dimension");
  if (cfg.init_p.size() != 0 && cfg.init_p.size() != d) bad_field("sim.init_p", "wrong dimension");
  if (cfg.bins == 0) cfg.bins = default_bins(d);
  if (cfg.bins < 10) bad_field("fit.bins", "must be >= 10");
  if (cfg.fit.basis_size < 4) bad_field("fit.basis_size", "must be >= 4");
  if (cfg.fit.bin_floor < 1) bad_field("fit.bin_floor", "must be >= 1");
  if (cfg.fit.smooth_passes < 0) bad_field("fit.smooth_passes", "must be >= 0");
  if (!(cfg.normality_threshold > 0.0 && cfg.normality_threshold < 1.0)) {
    bad_field("fit.normality_threshold", "must be in (0, 1)");
  }
  if (!(cfg.gamma > 0.0)) bad_field("sim.gamma", "must be > 0");
  if (cfg.subsample < 1) bad_field("sim.subsample", "must be >= 1");

  const bool needs_sim = command == "learn" || command == "scale-scan";
  const bool needs_cov_run =
      command == "estimate-cov" || (command == "learn" && d >= 2);
  if (needs_sim) {
    if (!(cfg.n_steps >= 1000)) bad_field("sim.n_steps", "must be >= 1000");
    if (cfg.burn_in >= cfg.n_steps) bad_field("sim.burn_in", "must be < n_steps");
  }
  if (command == "learn" || command == "estimate-cov") {
    if (command == "learn" && !(cfg.delta > 0.0)) bad_field("sim.delta", "must be > 0");
  }
  if (needs_cov_run) {
    if (cfg.cov_n_steps == 0) cfg.cov_n_steps = cfg.n_steps;
    if (cfg.cov_gamma == 0.0) cfg.cov_gamma = cfg.gamma;
    if (!(cfg.cov_n_steps >= 1000)) bad_field("covariance.n_steps", "must be >= 1000");
    if (!(cfg.cov_gamma > 0.0)) bad_field("covariance.gamma", "must be > 0");
    if (command == "estimate-cov" && !(cfg.delta > 0.0)) bad_field("sim.delta", "must be > 0");
    if (cfg.injected_sigma && cfg.injected_sigma->rows() != d) {
      bad_field("covariance.injected_sigma", "dimension mismatch with potential");
    }
  }
  if (command == "scale-scan") {
    if (cfg.scan_deltas.empty()) bad_field("scan.deltas", "missing or empty");
    for (std::size_t i = 0; i < cfg.scan_deltas.size(); ++i) {
      if (!(cfg.scan_deltas[i] > 0.0)) bad_field("scan.deltas", "entries must be > 0");
      if (i > 0 && !(cfg.scan_deltas[i] < cfg.scan_deltas[i - 1])) {
        bad_field("scan.deltas", "must be strictly decreasing");
      }
    }
  }
  if (command == "surrogate-compare") {
    const SurrogateConfig& s = cfg.surrogate;
    if (s.fit_file.empty()) bad_field("surrogate.fit_file", "missing");
    if (s.mode != "langevin" && s.mode != "hamiltonian" && s.mode != "both") {
      bad_field("surrogate.mode", "must be langevin, hamiltonian or both");
    }
    if (s.n_traj < 1) bad_field("surrogate.n_traj", "must be >= 1");
    if (!(s.horizon > 0.0)) bad_field("surrogate.horizon", "must be > 0");
    if (!(s.step > 0.0)) bad_field("surrogate.step", "must be > 0");
    if (!(s.full_step > 0.0)) bad_field("surrogate.full_step", "must be > 0");
    if (s.couple_noise) {
      double ratio = s.step / s.full_step;
      if (std::abs(ratio - std::llround(ratio)) > 1e-9 * ratio) {
        bad_field("surrogate.full_step", "must divide surrogate.step when couple_noise is on");
      }
    }
    if (!(s.equilibrium_window > 0.0 && s.equilibrium_window < 1.0)) {
      bad_field("surrogate.equilibrium_window", "must be in (0, 1)");
    }
    if (s.equilibrium_bins < 10) bad_field("surrogate.equilibrium_bins", "must be >= 10");
    if (!(s.max_lag > 0.0)) bad_field("surrogate.max_lag", "must be > 0");
    if (s.dump_trajectories < 0) bad_field("surrogate.dump_trajectories", "must be >= 0");
    if (s.friction && s.friction->rows() > 1 && s.friction->rows() != d) {
      bad_field("surrogate.friction", "dimension mismatch with potential");
    }
  }

  cfg.raw = j;
  cfg.raw["seed"] = cfg.seed;
  cfg.raw["out_dir"] = cfg.out_dir.generic_string();
  return cfg;
}

namespace {

State make_init(const RunConfig& config, int d) {
  State init;
  init.q = config.init_q.size() == d ? config.init_q : Vec::Zero(d);
  init.p = config.init_p.size() == d ? config.init_p : Vec::Zero(d);
  return init;
}

CovarianceEstimate run_stage1(const RunConfig& config, const PotentialOracle& oracle,
                              ManifestBuilder& manifest) {
  const int d = oracle.dim();
  ProbePlan plan = build_probe_plan(d, config.cov_gamma);
  CovPipelineParams params;
  params.run.delta = config.delta;
  params.run.n_steps = config.cov_n_steps;
  params.run.burn_in = -1;
  params.run.seed = config.seed;
  params.run.init_q = config.init_q;
  params.run.init_p = config.init_p;
  params.run.injected_sigma = config.injected_sigma;
  params.jobs = resolve_jobs(config);

  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < plan.probes.size(); ++k) {
    seeds.push_back(splitmix64(config.seed + 0x9E37U * static_cast<std::uint64_t>(k + 1)));
  }
  manifest.job_seeds("probes", seeds);

  CovarianceEstimate est = estimate_covariance(oracle, plan, params);
  if (est.projected) {
    manifest.warn("covariance projected to PSD; correction " +
                  std::to_string(est.projection_correction));
  }
  return est;
}

void write_covariance(const RunConfig& config, const CovarianceEstimate& est,
                      ManifestBuilder& manifest) {
  json j = est.to_json();
  Mat gamma_mat = friction_from_covariance(est);
  std::vector<double> gf;
  for (int i = 0; i < gamma_mat.rows(); ++i)
    for (int c = 0; c < gamma_mat.cols(); ++c) gf.push_back(gamma_mat(i, c));
  j["friction"] = gf;
  fs::path file = config.out_dir / config.cov_file;
  write_json_file(file, j);
  manifest.record_output(file);
}

}  // namespace

CovarianceEstimate cmd_estimate_cov(const RunConfig& config) {
  BuiltinPotential built = build_potential(config);
  OraclePtr oracle = resolve_oracle(built, config.component);
  fs::create_directories(config.out_dir);
  ManifestBuilder manifest(config);
  CovarianceEstimate est = manifest.stage("estimate_cov", [&] {
    return run_stage1(config, *oracle, manifest);
  });
  write_covariance(config, est, manifest);
  manifest.write();
  return est;
}

LearnOutput cmd_learn(const RunConfig& config) {
  BuiltinPotential built = build_potential(config);
  OraclePtr oracle = resolve_oracle(built, config.component);
  const int d = oracle->dim();
  fs::create_directories(config.out_dir);
  ManifestBuilder manifest(config);
  LearnOutput out;

  Mat friction;
  if (d == 1) {
    friction = config.gamma * Mat::Identity(1, 1);
  } else {
    fs::path cov_path = config.out_dir / config.cov_file;
    if (fs::exists(cov_path)) {
      std::ifstream in(cov_path);
      json j;
      in >> j;
      CovarianceEstimate est = CovarianceEstimate::from_json(j);
      friction = friction_from_covariance(est);
      manifest.set("covariance_source", cov_path.generic_string());
    } else {
      manifest.warn("covariance file missing; running stage-1 estimation implicitly");
      CovarianceEstimate est = manifest.stage("estimate_cov", [&] {
        return run_stage1(config, *oracle, manifest);
      });
      write_covariance(config, est, manifest);
      friction = friction_from_covariance(est);
      out.covariance = est;
    }
  }

  SimConfig sim;
  sim.delta = config.delta;
  sim.mass = Mat::Identity(d, d);
  sim.friction = friction;
  sim.n_steps = config.n_steps;
  sim.burn_in = config.burn_in >= 0 ? config.burn_in : config.n_steps / 10;
  sim.subsample = config.subsample;
  sim.seed = config.seed;

  SampleSet samples = manifest.stage("simulate", [&] {
    return simulate_damped(*oracle, sim, make_init(config, d));
  });

  if (config.dump_trajectory) {
    fs::path traj = config.out_dir / "trajectory.csv";
    std::ofstream tout(traj);
    tout << "t";
    for (int c = 0; c < d; ++c) tout << ",q_" << (c + 1);
    for (int c = 0; c < d; ++c) tout << ",p_" << (c + 1);
    tout << "\n";
    for (long long i = 0; i < samples.size(); ++i) {
      double t = static_cast<double>(samples.burn_in + (i + 1) * samples.subsample) * samples.delta;
      tout << csv::fmt(t);
      for (int c = 0; c < d; ++c) tout << "," << csv::fmt(samples.qs(i, c));
      for (int c = 0; c < d; ++c) tout << "," << csv::fmt(samples.ps(i, c));
      tout << "\n";
    }
    tout.close();
    manifest.record_output(traj);
  }

  out.normality = manifest.stage("normality", [&] {
    return normality_test(samples, config.normality_threshold);
  });
  fs::path norm_path = config.out_dir / "normality.json";
  write_json_file(norm_path, out.normality.to_json());
  manifest.record_output(norm_path);

  if (!out.normality.verdict) {
    manifest.warn("normality gate failed");
    manifest.write();
    throw NormalityGateError(
        "momentum normality gate failed (min p = " +
        std::to_string(out.normality.per_dim_p.minCoeff()) +
        "); the step size does not isolate a resolved scale - adjust delta and rerun");
  }

  out.beta = estimate_beta(samples);
  if (out.beta.out_of_range) {
    manifest.warn("beta_hat " + std::to_string(out.beta.value) + " outside (0.2, 1.25)");
  }

  out.histogram = manifest.stage("histogram", [&] {
    return histogram_density(samples.qs, std::vector<int>(d, config.bins));
  });
  fs::path hist_path = config.out_dir / "histogram.csv";
  write_histogram_csv(hist_path.string(), out.histogram);
  manifest.record_output(hist_path);

  out.fit = manifest.stage("fit", [&] {
    return fit_potential(out.histogram, out.beta.value, config.fit);
  });
  fs::path fit_path = config.out_dir / "fitted_potential.json";
  write_json_file(fit_path, out.fit.to_json());
  manifest.record_output(fit_path);

  manifest.set("beta_hat", out.beta.value);
  manifest.set("fit_residual_rms", out.fit.residual_rms);
  manifest.write();
  return out;
}

std::vector<ScanEntry> cmd_scale_scan(const RunConfig& config) {
  BuiltinPotential built = build_potential(config);
  OraclePtr oracle = resolve_oracle(built, config.component);
  fs::create_directories(config.out_dir);
  ManifestBuilder manifest(config);

  ScanParams params;
  params.gamma = config.gamma;
  params.n_steps = config.n_steps;
  params.burn_in = config.burn_in;
  params.subsample = config.subsample;
  params.seed = config.seed;
  params.init_q = config.init_q;
  params.init_p = config.init_p;
  params.bins = config.bins;
  params.fit = config.fit;
  params.normality_threshold = config.normality_threshold;

  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < config.scan_deltas.size(); ++k) {
    seeds.push_back(splitmix64(config.seed + static_cast<std::uint64_t>(k)));
  }
  manifest.job_seeds("scan", seeds);

  std::vector<ScanEntry> entries = manifest.stage("scan", [&] {
    return scale_scan(*oracle, config.scan_deltas, params, resolve_jobs(config));
  });

  json jentries = json::array();
  int n_ok = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const ScanEntry& e = entries[k];
    json je;
    je["delta"] = e.delta;
    je["completed"] = e.completed;
    if (!e.error.empty()) je["error"] = e.error;
    if (e.completed) {
      je["normality"] = e.normality.to_json();
      je["beta_hat"] = e.beta_hat;
      je["fitted"] = e.fitted;
      ++n_ok;
      if (e.beta_warning) {
        manifest.warn("scan delta " + std::to_string(e.delta) + ": beta_hat " +
                      std::to_string(e.beta_hat) + " outside (0.2, 1.25)");
      }
      if (!e.normality.verdict) {
        manifest.warn("scan delta " + std::to_string(e.delta) + ": normality gate failed");
      }
      if (e.fitted) {
        char name[64];
        std::snprintf(name, sizeof(name), "fitted_potential_%03zu.json", k);
        fs::path fp = config.out_dir / name;
        write_json_file(fp, e.fit.to_json());
        manifest.record_output(fp);
        je["fit_file"] = name;
      }
    } else {
      manifest.warn("scan delta " + std::to_string(e.delta) + " failed: " + e.error);
    }
    jentries.push_back(je);
  }
  fs::path scan_path = config.out_dir / "scan.json";
  write_json_file(scan_path, json{{"entries", jentries}});
  manifest.record_output(scan_path);
  manifest.write();

  if (n_ok == 0) {
    throw DivergenceError("every scan entry failed; first error: " + entries.front().error, -1,
                          Vec(), Vec());
  }
  return entries;
}

namespace {

struct ModelRun {
  std::string label;
  OraclePtr oracle;
  double step;
  std::optional<std::pair<Vec, Vec>> domain;
  double margin = 0.0;
};

DiagnosticsReport run_model(const ModelRun& model, SurrogateMode mode, const RunConfig& config,
                            const Mat& friction, double beta_hat, int n_traj,
                            ManifestBuilder& manifest, bool with_phase) {
  const SurrogateConfig& s = config.surrogate;
  const int d = model.oracle->dim();
  EnsembleConfig ec;
  ec.n_traj = n_traj;
  ec.horizon = s.horizon;
  ec.step = model.step;
  ec.store_dt = s.store_dt > 0.0 ? s.store_dt : s.step;
  ec.seed = config.seed;
  ec.init_q = s.init_q ? DistSpec::from_json(*s.init_q, d) : DistSpec::point(Vec::Zero(d));
  ec.init_p = s.init_p ? DistSpec::from_json(*s.init_p, d) : DistSpec::point(Vec::Zero(d));
  ec.noise_grid_step = s.couple_noise ? s.full_step : 0.0;
  ec.domain = model.domain;
  ec.domain_margin = model.margin;

  Trajectories traj = run_ensemble(*model.oracle, mode, ec, friction, beta_hat,
                                   resolve_jobs(config));
  if (traj.n_excluded > 0) {
    manifest.warn(model.label + ": " + std::to_string(traj.n_excluded) +
                  " trajectories excluded (left fitted domain or diverged)");
  }

  DiagnosticsParams dp;
  dp.max_lag = s.max_lag;
  dp.equilibrium_window = s.equilibrium_window;
  dp.equilibrium_bins = s.equilibrium_bins;
  dp.acf_burn_frac = s.equilibrium_window;
  dp.with_phase = with_phase;
  DiagnosticsReport rep = make_diagnostics(traj, dp);

  fs::path dir = config.out_dir / model.label;
  fs::create_directories(dir);
  write_mean_path_csv((dir / "mean_path.csv").string(), rep);
  manifest.record_output(dir / "mean_path.csv");
  write_acf_csv((dir / "acf.csv").string(), rep);
  manifest.record_output(dir / "acf.csv");
  write_equilibrium_csv((dir / "equilibrium.csv").string(), rep);
  manifest.record_output(dir / "equilibrium.csv");
  if (with_phase) {
    write_phase_csv((dir / "phase.csv").string(), rep);
    manifest.record_output(dir / "phase.csv");
  }
  write_json_file(dir / "diagnostics.json", rep.to_json());
  manifest.record_output(dir / "diagnostics.json");
  for (int k = 0; k < std::min(s.dump_trajectories, traj.n_traj()); ++k) {
    char name[64];
    std::snprintf(name, sizeof(name), "traj_%03d.csv", k);
    write_trajectory_csv((dir / name).string(), traj, k);
    manifest.record_output(dir / name);
  }
  return rep;
}

}  // namespace

CompareOutput cmd_surrogate_compare(const RunConfig& config) {
  const SurrogateConfig& s = config.surrogate;
  fs::path fit_path = s.fit_file;
  if (!fs::exists(fit_path)) {
    throw MissingArtifactError("fitted potential not found: " + fit_path.string());
  }
  json fj;
  {
    std::ifstream in(fit_path);
    in >> fj;
  }
  FittedPotential fit = FittedPotential::from_json(fj);

  BuiltinPotential built = build_potential(config);
  OraclePtr full_oracle = resolve_oracle(built, config.component);
  const int d = full_oracle->dim();
  if (fit.dim() != d) {
    throw ConfigError("fitted potential dimension does not match configured potential");
  }

  Mat friction;
  if (s.friction) {
    friction = s.friction->rows() == 1 && d > 1 ? ((*s.friction)(0, 0) * Mat::Identity(d, d)).eval()
                                                : *s.friction;
  } else if (d == 1) {
    friction = config.gamma * Mat::Identity(1, 1);
  } else {
    throw ConfigError("surrogate.friction is required for multi-dimensional comparisons");
  }
  const double beta_hat = s.beta_hat ? *s.beta_hat : fit.beta_hat;

  fs::create_directories(config.out_dir);
  ManifestBuilder manifest(config);
  manifest.set("beta_hat", beta_hat);

  auto [lo, hi] = fit.domain();
  double span = (hi - lo).maxCoeff();
  ModelRun full{"full", full_oracle, s.full_step, std::nullopt, 0.0};
  ModelRun surr{"surrogate", fit.oracle(), s.step, std::make_pair(lo, hi), 0.1 * span};
  std::optional<ModelRun> ref;
  if (s.reference) {
    BuiltinPotential ref_built = make_builtin(*s.reference);
    ref = ModelRun{"reference", resolve_oracle(ref_built, s.reference_component), s.full_step,
                   std::nullopt, 0.0};
  }

  CompareOutput out;
  const bool langevin = s.mode == "langevin" || s.mode == "both";
  const bool hamiltonian = s.mode == "hamiltonian" || s.mode == "both";

  if (langevin) {
    out.full = manifest.stage("full_langevin", [&] {
      return run_model(full, SurrogateMode::Langevin, config, friction, beta_hat, s.n_traj,
                       manifest, false);
    });
    out.surrogate = manifest.stage("surrogate_langevin", [&] {
      return run_model(surr, SurrogateMode::Langevin, config, friction, beta_hat, s.n_traj,
                       manifest, false);
    });
    if (ref) {
      out.reference = manifest.stage("reference_langevin", [&] {
        return run_model(*ref, SurrogateMode::Langevin, config, friction, beta_hat, s.n_traj,
                         manifest, false);
      });
    }
  }
  if (hamiltonian) {
    // single-trajectory phase portraits
    RunConfig phase_cfg = config;
    auto full_phase = manifest.stage("full_hamiltonian", [&] {
      ModelRun m = full;
      m.label = langevin ? "full_hamiltonian" : "full";
      return run_model(m, SurrogateMode::Hamiltonian, phase_cfg, friction, beta_hat, 1, manifest,
                       true);
    });
    auto surr_phase = manifest.stage("surrogate_hamiltonian", [&] {
      ModelRun m = surr;
      m.label = langevin ? "surrogate_hamiltonian" : "surrogate";
      return run_model(m, SurrogateMode::Hamiltonian, phase_cfg, friction, beta_hat, 1, manifest,
                       true);
    });
    if (ref) {
      ModelRun m = *ref;
      m.label = langevin ? "reference_hamiltonian" : "reference";
      manifest.stage("reference_hamiltonian", [&] {
        return run_model(m, SurrogateMode::Hamiltonian, phase_cfg, friction, beta_hat, 1, manifest,
                         true);
      });
    }
    if (!langevin) {
      out.full = full_phase;
      out.surrogate = surr_phase;
    }
    out.has_phase = true;
  }

  out.surrogate_vs_full = compare_reports(out.surrogate, out.full);
  json cj;
  cj["surrogate_vs_full"] = out.surrogate_vs_full.to_json();
  if (out.reference) {
    out.reference_vs_full = compare_reports(*out.reference, out.full);
    cj["reference_vs_full"] = out.reference_vs_full->to_json();
  }
  if (out.surrogate_vs_full.disjoint_support) {
    manifest.warn("surrogate and full equilibrium supports are disjoint (TV = 1)");
  }
  fs::path cmp_path = config.out_dir / "compare.json";
  write_json_file(cmp_path, cj);
  manifest.record_output(cmp_path);
  manifest.write();
  return out;
}

GradientCheckReport cmd_gradient_check(const RunConfig& config) {
  BuiltinPotential built = build_potential(config);
  OraclePtr oracle = resolve_oracle(built, config.component);
  const int d = oracle->dim();

  double eps_min = 1.0;
  for (const auto& [k, v] : config.potential.params) {
    if ((k == "eps" || k == "eps1" || k == "eps2") && v > 0.0) eps_min = std::min(eps_min, v);
  }
  if (config.potential.params.empty()) {
    // defaults of the stiff kinds
    switch (config.potential.kind) {
      case BuiltinKind::Quad3Scale:
      case BuiltinKind::DoubleWell3Scale:
        eps_min = 0.001;
        break;
      case BuiltinKind::Quad2D:
      case BuiltinKind::MullerBrown2D:
        eps_min = 1e-5;
        break;
      case BuiltinKind::CosSum:
        eps_min = 1.0 / 400.0;
        break;
    }
  }
  // truncation ~ h^2/eps^2, roundoff ~ u/h: balance at h ~ (u eps^2)^(1/3)
  double fd_step = std::max(1e-9, std::cbrt(1e-16 * eps_min * eps_min));
  const json gj = config.raw.value("gradient_check", json::object());
  fd_step = get_num(gj, "fd_step", fd_step);
  const int n_points = static_cast<int>(get_int(gj, "n_points", 20));
  const double lo = get_num(gj, "lo", -2.0);
  const double hi = get_num(gj, "hi", 2.0);

  std::mt19937_64 rng = make_engine(config.seed, 0x6C1);
  std::uniform_real_distribution<double> unif(lo, hi);
  std::vector<Vec> points;
  for (int i = 0; i < n_points; ++i) {
    Vec q(d);
    for (int c = 0; c < d; ++c) q[c] = unif(rng);
    points.push_back(q);
  }
  GradientCheckReport report = gradient_check(*oracle, points, fd_step);

  fs::create_directories(config.out_dir);
  ManifestBuilder manifest(config);
  json j;
  j["max_rel_err"] = report.max_rel_err;
  j["fd_step"] = report.fd_step;
  j["n_points"] = n_points;
  j["worst_point"] =
      std::vector<double>(report.worst_point.data(), report.worst_point.data() + report.worst_point.size());
  fs::path path = config.out_dir / "gradient_check.json";
  write_json_file(path, j);
  manifest.record_output(path);
  manifest.write();
  return report;
}

int run_command(const std::string& command, const fs::path& config_path,
                const std::optional<std::string>& out_override,
                const std::optional<std::uint64_t>& seed_override,
                const std::optional<int>& jobs_override) {
  try {
    RunConfig config = load_config(config_path, command, out_override, seed_override, jobs_override);
    if (command == "estimate-cov") {
      cmd_estimate_cov(config);
    } else if (command == "learn") {
      cmd_learn(config);
    } else if (command == "scale-scan") {
      cmd_scale_scan(config);
    } else if (command == "surrogate-compare") {
      cmd_surrogate_compare(config);
    } else if (command == "gradient-check") {
      cmd_gradient_check(config);
    } else {
      std::cerr << "unknown command: " << command << "\n";
      return kExitValidation;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NormalityGateError& e) {
    std::cerr << "normality gate: " << e.what() << "\n";
    return kExitNormalityGate;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace effpot
