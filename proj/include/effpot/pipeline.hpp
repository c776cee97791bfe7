#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "effpot/covariance.hpp"
#include "effpot/equilibrium.hpp"
#include "effpot/potentials.hpp"
#include "effpot/surrogate.hpp"

namespace effpot {

// CLI exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitNormalityGate = 4;
inline constexpr int kExitMissingArtifact = 5;

struct SurrogateConfig {
  std::string fit_file;
  std::string mode = "langevin";  // langevin | hamiltonian | both
  int n_traj = 500;
  double horizon = 50.0;
  double step = 0.1;
  double full_step = 5e-4;
  double store_dt = 0.0;  // 0: surrogate step
  double max_lag = 10.0;
  std::optional<Mat> friction;  // default: gamma I (1D) or covariance-file friction (2D)
  std::optional<double> beta_hat;
  std::optional<nlohmann::json> init_q, init_p;
  double equilibrium_window = 0.5;
  int equilibrium_bins = 200;
  bool couple_noise = true;
  std::optional<BuiltinSpec> reference;  // extra surrogate from a plain potential (truncation)
  std::optional<std::string> reference_component;
  int dump_trajectories = 0;
};

struct RunConfig {
  std::string pipeline;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  int jobs = 0;  // 0: hardware default

  BuiltinSpec potential{BuiltinKind::Quad3Scale, {}};
  std::optional<std::string> component;

  // stage-2 / data-generation simulation
  double delta = 0.0;
  double gamma = 0.1;
  long long n_steps = 0;
  long long burn_in = -1;  // -1: 10%
  long long subsample = 1;
  Vec init_q, init_p;
  bool dump_trajectory = false;

  // fitting
  int bins = 0;  // 0: 200 (1D) or 80 (2D)
  FitParams fit;
  double normality_threshold = 0.01;
  long long normality_max_points = 20000;

  // covariance estimation
  std::string cov_file = "covariance.json";
  long long cov_n_steps = 0;  // 0: n_steps
  double cov_gamma = 0.0;     // 0: gamma
  std::optional<Mat> injected_sigma;

  std::vector<double> scan_deltas;

  SurrogateConfig surrogate;

  nlohmann::json raw;  // resolved config as loaded (for the manifest)
};

// Parses and validates; every rejected knob names the offending field. No
// output is written while validation can still fail.
RunConfig load_config(const std::filesystem::path& path, const std::string& command,
                      const std::optional<std::string>& out_override = std::nullopt,
                      const std::optional<std::uint64_t>& seed_override = std::nullopt,
                      const std::optional<int>& jobs_override = std::nullopt);

BuiltinPotential build_potential(const RunConfig& config);
OraclePtr resolve_oracle(const BuiltinPotential& built, const std::optional<std::string>& component);

struct LearnOutput {
  FittedPotential fit;
  NormalityReport normality;
  BetaEstimate beta;
  Histogram histogram;
  std::optional<CovarianceEstimate> covariance;  // when stage 1 ran implicitly
};

struct CompareOutput {
  DiagnosticsReport full;
  DiagnosticsReport surrogate;
  std::optional<DiagnosticsReport> reference;
  Discrepancy surrogate_vs_full;
  std::optional<Discrepancy> reference_vs_full;
  bool has_phase = false;
};

CovarianceEstimate cmd_estimate_cov(const RunConfig& config);
LearnOutput cmd_learn(const RunConfig& config);
std::vector<ScanEntry> cmd_scale_scan(const RunConfig& config);
CompareOutput cmd_surrogate_compare(const RunConfig& config);
GradientCheckReport cmd_gradient_check(const RunConfig& config);

// Maps a thrown error to the documented exit code and prints the message.
int run_command(const std::string& command, const std::filesystem::path& config_path,
                const std::optional<std::string>& out_override,
                const std::optional<std::uint64_t>& seed_override,
                const std::optional<int>& jobs_override);

}  // namespace effpot
