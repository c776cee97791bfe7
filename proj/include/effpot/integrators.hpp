#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "effpot/errors.hpp"
#include "effpot/potentials.hpp"
#include "effpot/rng.hpp"

namespace effpot {

struct State {
  Vec q;
  Vec p;
};

// Parameters of one damped/Langevin run. Mass and friction are full d x d
// matrices; helpers below cover the common isotropic cases.
struct SimConfig {
  double delta = 0.0;
  Mat mass;
  Mat friction;
  long long n_steps = 0;
  long long burn_in = 0;
  long long subsample = 1;
  std::uint64_t seed = 0;

  void validate() const;
  int dim() const { return static_cast<int>(mass.rows()); }

  static SimConfig isotropic(int d, double delta, double gamma, long long n_steps,
                             long long burn_in, long long subsample = 1, std::uint64_t seed = 0);
};

// Step factors shared by every iteration: (delta/2) M^-1 and the exponential
// damping factor exp(-Gamma M^-1 delta).
struct PrecomputedStep {
  Mat mass_inv;
  Mat half_mass_inv_delta;
  Mat damp;
};

PrecomputedStep precompute(const SimConfig& config);

// One step of the dissipative Stormer-Verlet recurrence:
//   q_{n+1/2} = q_n + (delta/2) M^-1 p_n
//   p_{n+1}   = exp(-Gamma M^-1 delta) p_n - delta grad V(q_{n+1/2})
//   q_{n+1}   = q_{n+1/2} + (delta/2) M^-1 p_{n+1}
// Exactly one gradient evaluation, at the midpoint.
State verlet_step(const State& state, const PotentialOracle& oracle, const PrecomputedStep& pre,
                  const SimConfig& config);

// Leapfrog: the same recurrence with zero friction.
State hamiltonian_step(const State& state, const PotentialOracle& oracle,
                       const PrecomputedStep& pre, const SimConfig& config);

// Precomputed factors for the stochastic kinetic-Langevin step: the momentum
// refresh is an exact Ornstein-Uhlenbeck update with covariance
// (M - D M D^T)/beta_hat where D = exp(-Gamma M^-1 delta).
struct LangevinPre {
  Mat mass_inv;
  Mat half_mass_inv_delta;
  Mat damp;
  Mat noise_l;  // symmetric square root of the refresh covariance
  double beta_hat = 1.0;
  bool has_noise = false;
};

LangevinPre precompute_langevin(const SimConfig& config, double beta_hat);

// Splitting scheme: half drift, full kick, exact OU momentum refresh, half
// drift. With Gamma = 0 this reduces to the leapfrog step.
State langevin_step(const State& state, const PotentialOracle& oracle, const LangevinPre& pre,
                    const SimConfig& config, std::mt19937_64& rng);

// Equilibrium samples collected from one damped run.
struct SampleSet {
  Mat qs;  // one sample per row
  Mat ps;
  double delta = 0.0;
  long long burn_in = 0;
  long long subsample = 1;
  std::uint64_t seed = 0;
  bool diverged = false;

  long long size() const { return qs.rows(); }
  int dim() const { return static_cast<int>(qs.cols()); }
};

SampleSet simulate_damped(const PotentialOracle& oracle, const SimConfig& config,
                          const State& init);

double standard_normal(std::mt19937_64& rng);

namespace detail {

inline void check_step_finite(bool ok, long long step, const Vec& last_q, const Vec& last_p,
                              const std::string& what) {
  if (!ok) {
    throw DivergenceError("divergence at step " + std::to_string(step) + ": " + what, step,
                          last_q, last_p);
  }
}

// Streaming damped-Verlet driver; calls on_sample(q, p) for every retained
// post-burn-in sample. Scalar fast path for d = 1, dense path otherwise.
template <class OnSample>
void run_damped_stream(const PotentialOracle& oracle, const SimConfig& config, const State& init,
                       OnSample&& on_sample) {
  config.validate();
  const int d = config.dim();
  if (init.q.size() != d || init.p.size() != d) {
    throw ConfigError("initial state dimension does not match mass matrix");
  }
  if (oracle.dim() != d) throw ConfigError("oracle dimension does not match configuration");
  const PrecomputedStep pre = precompute(config);
  const double delta = config.delta;
  const long long burn = config.burn_in;
  const long long stride = config.subsample;

  if (d == 1) {
    const double half = pre.half_mass_inv_delta(0, 0);
    const double damp = pre.damp(0, 0);
    double q = init.q[0], p = init.p[0];
    Vec qh(1), g(1), qv(1), pv(1);
    for (long long n = 1; n <= config.n_steps; ++n) {
      const double q_prev = q, p_prev = p;
      const double qhalf = q + half * p;
      qh[0] = qhalf;
      oracle.gradient(qh, g);
      p = damp * p - delta * g[0];
      q = qhalf + half * p;
      if (!(std::isfinite(q) && std::isfinite(p)) || std::abs(q) > 1e8) {
        qv[0] = q_prev;
        pv[0] = p_prev;
        check_step_finite(false, n, qv, pv, "non-finite or unbounded state");
      }
      if (n > burn && (n - burn) % stride == 0) {
        qv[0] = q;
        pv[0] = p;
        on_sample(static_cast<const Vec&>(qv), static_cast<const Vec&>(pv));
      }
    }
    return;
  }

  Vec q = init.q, p = init.p;
  Vec q_prev = q, p_prev = p;
  Vec qh(d), g(d), pn(d);
  for (long long n = 1; n <= config.n_steps; ++n) {
    q_prev = q;
    p_prev = p;
    qh.noalias() = q;
    qh.noalias() += pre.half_mass_inv_delta * p;
    oracle.gradient(qh, g);
    pn.noalias() = pre.damp * p;
    pn.noalias() -= delta * g;
    p.swap(pn);
    q.noalias() = qh;
    q.noalias() += pre.half_mass_inv_delta * p;
    if (!q.allFinite() || !p.allFinite() || q.squaredNorm() > 1e16) {
      check_step_finite(false, n, q_prev, p_prev, "non-finite or unbounded state");
    }
    if (n > burn && (n - burn) % stride == 0) {
      on_sample(static_cast<const Vec&>(q), static_cast<const Vec&>(p));
    }
  }
}

}  // namespace detail
}  // namespace effpot
