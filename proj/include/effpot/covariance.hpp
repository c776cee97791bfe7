#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"

#include "effpot/integrators.hpp"
#include "effpot/potentials.hpp"

namespace effpot {

// Inverse-mass probe matrices used to read off the entries of Z = Sigma
// Sigma^T from equilibrium momentum moments. d diagonal probes
// A^(k) = I + e_k e_k^T followed by one probe per index pair (l, r) equal to
// the identity with the (l, r) entries set to 1/2.
struct ProbePlan {
  std::vector<Mat> probes;
  double gamma = 0.0;

  int dim() const { return probes.empty() ? 0 : static_cast<int>(probes.front().rows()); }
};

ProbePlan build_probe_plan(int d, double gamma);

// Result of one probe run. At statistical equilibrium the Hamiltonian drift
// balance gives Tr(Z M^-1) = 2 gamma E[p^T M^-2 p]; trace_estimate is the
// left side estimated from the measured momentum moment.
struct RhsMeasurement {
  double gamma_p_moment = 0.0;  // gamma * time-average of p^T M^-2 p
  double trace_estimate = 0.0;  // 2 * gamma_p_moment
  double stderr_trace = 0.0;    // batch-means standard error of trace_estimate
};

struct ProbeRunParams {
  double delta = 0.0;
  long long n_steps = 0;
  long long burn_in = -1;  // -1: 10% of n_steps
  std::uint64_t seed = 0;
  Vec init_q, init_p;
  int batches = 100;
  // When set, explicit noise sqrt(delta) * Sigma * xi is injected into the
  // momentum update each step (stochastic probe run with known covariance).
  std::optional<Mat> injected_sigma;
};

RhsMeasurement measure_rhs(const PotentialOracle& oracle, const Mat& probe, double gamma,
                           const ProbeRunParams& params);

struct CovarianceEstimate {
  Mat z;
  Vec rhs;        // per-probe gamma * E[p^T M^-2 p], as measured
  Vec trace_rhs;  // per-probe Tr(Z A) estimates fed to the solver
  Vec stderr_trace;
  bool projected = false;
  double projection_correction = 0.0;  // ||Z_raw - Z_psd||_F
  ProbePlan plan;

  nlohmann::json to_json() const;
  static CovarianceEstimate from_json(const nlohmann::json& j);
};

// Solves the probe linear system given per-probe estimates of Tr(Z A^(k)):
// the d diagonal probes determine the diagonal of Z, each pair probe yields
// one off-diagonal entry. The result is symmetrized and projected to the PSD
// cone by eigenvalue clipping (flagged when the projection is active).
CovarianceEstimate solve_covariance(const ProbePlan& plan, const Vec& trace_rhs,
                                    const Vec& stderr_trace = Vec());

// Friction that restores the closed-form Gibbs equilibrium: Gamma = Z / 2.
Mat friction_from_covariance(const CovarianceEstimate& estimate);

struct CovPipelineParams {
  ProbeRunParams run;
  int jobs = 1;
};

// Full stage-1 estimation: one probe run per plan entry (independent seeds,
// parallelizable), then the linear solve.
CovarianceEstimate estimate_covariance(const PotentialOracle& oracle, const ProbePlan& plan,
                                       const CovPipelineParams& params);

}  // namespace effpot
