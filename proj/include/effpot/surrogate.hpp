#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "effpot/equilibrium.hpp"
#include "effpot/integrators.hpp"
#include "effpot/potentials.hpp"

namespace effpot {

// Per-dimension initial-condition distribution: normal(mean, std),
// uniform(a, b) + shift, or a fixed point.
struct DistSpec {
  enum class Kind { Normal, Uniform, Point };
  Kind kind = Kind::Point;
  Vec a;      // mean / lower / point
  Vec b;      // std / upper
  Vec shift;  // uniform offset

  static DistSpec point(const Vec& v);
  static DistSpec normal(const Vec& mean, const Vec& stddev);
  static DistSpec uniform(const Vec& lo, const Vec& hi, const Vec& shift);
  Vec sample(int d, std::mt19937_64& rng) const;

  nlohmann::json to_json() const;
  static DistSpec from_json(const nlohmann::json& j, int d);
};

enum class SurrogateMode { Hamiltonian, Langevin };

struct EnsembleConfig {
  int n_traj = 1;
  double horizon = 0.0;
  double step = 0.0;
  double store_dt = 0.0;  // 0: store every step
  std::uint64_t seed = 0;
  DistSpec init_q, init_p;
  // Noise increments are drawn on this grid and aggregated exactly into the
  // OU refresh, so two models with different step sizes but the same grid and
  // seed share one thermal history (default 0: the model's own step).
  double noise_grid_step = 0.0;
  // Trajectories leaving this box (plus margin) are flagged and excluded from
  // statistics. Unset: only the divergence guard applies.
  std::optional<std::pair<Vec, Vec>> domain;
  double domain_margin = 0.0;
};

struct Trajectories {
  Vec times;
  std::vector<Mat> q;  // per trajectory: n_stored x d
  std::vector<Mat> p;
  std::vector<std::uint8_t> excluded;
  int n_excluded = 0;
  double step = 0.0;

  int n_traj() const { return static_cast<int>(q.size()); }
  int dim() const { return q.empty() ? 0 : static_cast<int>(q.front().cols()); }
};

// M independent trajectories from i.i.d. initial conditions; per-trajectory
// RNG streams keyed by (seed, index), so results are identical for a fixed
// seed no matter how many workers run them.
Trajectories run_ensemble(const PotentialOracle& oracle, SurrogateMode mode,
                          const EnsembleConfig& config, const Mat& friction, double beta_hat,
                          int jobs = 1);

// Pointwise ensemble average of q over non-excluded trajectories.
Mat mean_trajectory(const Trajectories& trajectories);

// Checked variant used by the raggedness contract.
Mat mean_trajectory(const std::vector<Mat>& qs);

// Normalized autocovariance of q across time and ensembles, per coordinate;
// exactly 1 at lag zero. Time averages start after burn_frac of the stored
// window and stop at N - n_tau.
std::pair<Vec, Mat> normalized_acf(const Trajectories& trajectories, double max_lag,
                                   double burn_frac = 0.0);

struct DiagnosticsReport {
  Vec times;
  Mat mean_path;  // n_stored x d
  Vec lags;
  Mat acf;  // n_lags x d
  Histogram equilibrium;
  Mat phase;  // n_stored x 2d, first trajectory (empty unless requested)
  int n_traj = 0;
  int n_excluded = 0;
  double equilibrium_window = 0.5;

  nlohmann::json to_json() const;
};

struct DiagnosticsParams {
  double max_lag = 10.0;
  double equilibrium_window = 0.5;  // pool q from t >= window * horizon
  int equilibrium_bins = 200;
  double acf_burn_frac = 0.5;
  bool with_phase = false;
};

DiagnosticsReport make_diagnostics(const Trajectories& trajectories,
                                   const DiagnosticsParams& params);

struct Discrepancy {
  double mean_path_linf = 0.0;
  double mean_path_l2 = 0.0;
  double acf_linf = 0.0;
  double acf_l2 = 0.0;
  double equilibrium_tv = 0.0;
  bool disjoint_support = false;

  nlohmann::json to_json() const;
};

// L-inf/L2 discrepancies of mean path and ACF (grids aligned by linear
// interpolation) and the exact total-variation distance between the
// piecewise-constant equilibrium densities.
Discrepancy compare_reports(const DiagnosticsReport& a, const DiagnosticsReport& b);

void write_mean_path_csv(const std::string& path, const DiagnosticsReport& report);
void write_acf_csv(const std::string& path, const DiagnosticsReport& report);
void write_equilibrium_csv(const std::string& path, const DiagnosticsReport& report);
void write_phase_csv(const std::string& path, const DiagnosticsReport& report);
void write_trajectory_csv(const std::string& path, const Trajectories& trajectories, int index);

}  // namespace effpot
