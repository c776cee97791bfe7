#include "effpot/integrators.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace effpot {

namespace {

bool is_symmetric(const Mat& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + m.cwiseAbs().maxCoeff());
}

// exp(-B) via symmetric eigendecomposition when possible (always the case in
// this pipeline: either Gamma = gamma I or M = I), scaling-and-squaring
// otherwise.
Mat damp_factor(const Mat& friction, const Mat& mass_inv, double delta) {
  Mat b = friction * mass_inv * delta;
  if (b.cwiseAbs().maxCoeff() == 0.0) {
    return Mat::Identity(b.rows(), b.cols());
  }
  if (is_symmetric(b)) {
    Eigen::SelfAdjointEigenSolver<Mat> es(b);
    return es.eigenvectors() * (-es.eigenvalues().array()).exp().matrix().asDiagonal() *
           es.eigenvectors().transpose();
  }
  Mat mb = -b;
  return mb.exp();
}

}  // namespace

void SimConfig::validate() const {
  if (!(delta > 0.0)) throw ConfigError("delta must be > 0");
  if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
  if (burn_in < 0 || burn_in >= n_steps) throw ConfigError("burn_in must lie in [0, n_steps)");
  if (subsample < 1) throw ConfigError("subsample must be >= 1");
  if (mass.rows() == 0 || mass.rows() != mass.cols()) throw ConfigError("mass must be square");
  if (friction.rows() != mass.rows() || friction.cols() != mass.cols()) {
    throw ConfigError("friction must match mass dimensions");
  }
  if (!is_symmetric(mass)) throw ConfigError("mass must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es_m(mass);
  if (es_m.eigenvalues().minCoeff() <= 0.0) throw ConfigError("mass must be positive definite");
  if (!is_symmetric(friction)) throw ConfigError("friction must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es_g(friction);
  if (es_g.eigenvalues().minCoeff() < -1e-12 * (1.0 + friction.cwiseAbs().maxCoeff())) {
    throw ConfigError("friction must be positive semidefinite");
  }
}

SimConfig SimConfig::isotropic(int d, double delta, double gamma, long long n_steps,
                               long long burn_in, long long subsample, std::uint64_t seed) {
  SimConfig cfg;
  cfg.delta = delta;
  cfg.mass = Mat::Identity(d, d);
  cfg.friction = gamma * Mat::Identity(d, d);
  cfg.n_steps = n_steps;
  cfg.burn_in = burn_in;
  cfg.subsample = subsample;
  cfg.seed = seed;
  return cfg;
}

PrecomputedStep precompute(const SimConfig& config) {
  config.validate();
  PrecomputedStep pre;
  Eigen::SelfAdjointEigenSolver<Mat> es(config.mass);
  pre.mass_inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                 es.eigenvectors().transpose();
  pre.half_mass_inv_delta = 0.5 * config.delta * pre.mass_inv;
  pre.damp = damp_factor(config.friction, pre.mass_inv, config.delta);
  return pre;
}

State verlet_step(const State& state, const PotentialOracle& oracle, const PrecomputedStep& pre,
                  const SimConfig& config) {
  const int d = oracle.dim();
  if (state.q.size() != d || state.p.size() != d) {
    throw ConfigError("state dimension does not match oracle");
  }
  State next;
  Vec qh = state.q + pre.half_mass_inv_delta * state.p;
  Vec g(d);
  oracle.gradient(qh, g);
  if (!g.allFinite()) {
    throw DivergenceError("non-finite gradient in verlet_step", -1, state.q, state.p);
  }
  next.p = pre.damp * state.p - config.delta * g;
  next.q = qh + pre.half_mass_inv_delta * next.p;
  return next;
}

State hamiltonian_step(const State& state, const PotentialOracle& oracle,
                       const PrecomputedStep& pre, const SimConfig& config) {
  PrecomputedStep freeflow = pre;
  freeflow.damp = Mat::Identity(pre.damp.rows(), pre.damp.cols());
  return verlet_step(state, oracle, freeflow, config);
}

LangevinPre precompute_langevin(const SimConfig& config, double beta_hat) {
  if (!(beta_hat > 0.0)) throw ConfigError("beta_hat must be > 0");
  PrecomputedStep base = precompute(config);
  LangevinPre pre;
  pre.mass_inv = base.mass_inv;
  pre.half_mass_inv_delta = base.half_mass_inv_delta;
  pre.damp = base.damp;
  pre.beta_hat = beta_hat;
  Mat c = (config.mass - pre.damp * config.mass * pre.damp.transpose()) / beta_hat;
  c = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(c);
  Vec lam = es.eigenvalues().cwiseMax(0.0);
  pre.noise_l =
      es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  pre.has_noise = pre.noise_l.cwiseAbs().maxCoeff() > 0.0;
  return pre;
}

double standard_normal(std::mt19937_64& rng) {
  // Box-Muller without caching, so coupled consumers draw in lockstep.
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u1 = 0.0;
  do {
    u1 = unif(rng);
  } while (u1 <= 0.0);
  double u2 = unif(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

State langevin_step(const State& state, const PotentialOracle& oracle, const LangevinPre& pre,
                    const SimConfig& config, std::mt19937_64& rng) {
  const int d = oracle.dim();
  State next;
  Vec qh = state.q + pre.half_mass_inv_delta * state.p;
  Vec g(d);
  oracle.gradient(qh, g);
  if (!g.allFinite()) {
    throw DivergenceError("non-finite gradient in langevin_step", -1, state.q, state.p);
  }
  Vec p_kicked = state.p - config.delta * g;
  next.p = pre.damp * p_kicked;
  if (pre.has_noise) {
    Vec z(d);
    for (int i = 0; i < d; ++i) z[i] = standard_normal(rng);
    next.p += pre.noise_l * z;
  }
  next.q = qh + pre.half_mass_inv_delta * next.p;
  return next;
}

SampleSet simulate_damped(const PotentialOracle& oracle, const SimConfig& config,
                          const State& init) {
  SampleSet out;
  const long long kept = (config.n_steps - config.burn_in) / config.subsample;
  if (kept < 1) throw ConfigError("no samples retained: increase n_steps or lower burn_in");
  const int d = oracle.dim();
  out.qs.resize(kept, d);
  out.ps.resize(kept, d);
  out.delta = config.delta;
  out.burn_in = config.burn_in;
  out.subsample = config.subsample;
  out.seed = config.seed;
  long long row = 0;
  detail::run_damped_stream(oracle, config, init, [&](const Vec& q, const Vec& p) {
    out.qs.row(row) = q.transpose();
    out.ps.row(row) = p.transpose();
    ++row;
  });
  out.qs.conservativeResize(row, d);
  out.ps.conservativeResize(row, d);
  return out;
}

}  // namespace effpot
