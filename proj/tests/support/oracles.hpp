#pragma once

// Independent reference implementations used only by tests: finite
// differences, direct Gibbs samplers, quadrature for the micro-scale
// covariance, analytic OU autocovariance, and a literal transcription of the
// damped Verlet recurrence. These never call into the code paths they check.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "effpot/potentials.hpp"

namespace oracles {

using effpot::Mat;
using effpot::Vec;

// Central finite differences at an explicit step.
inline Vec fd_gradient(const effpot::PotentialOracle& oracle, const Vec& q, double h) {
  Vec g(oracle.dim());
  Vec qp = q, qm = q;
  for (int i = 0; i < oracle.dim(); ++i) {
    qp[i] = q[i] + h;
    qm[i] = q[i] - h;
    g[i] = (oracle.value(qp) - oracle.value(qm)) / (2.0 * h);
    qp[i] = q[i];
    qm[i] = q[i];
  }
  return g;
}

// Literal scalar transcription of the dissipative Verlet recurrence.
struct VerletRef1D {
  double delta, gamma;
  std::function<double(double)> dv;

  void step(double& q, double& p) const {
    double qh = q + 0.5 * delta * p;
    p = std::exp(-gamma * delta) * p - delta * dv(qh);
    q = qh + 0.5 * delta * p;
  }
};

// Exact sampler for the standard normal Gibbs density of V = q^2/2 at beta.
inline std::vector<double> sample_gaussian(std::size_t n, double mean, double stddev,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

// Rejection sampler for density proportional to exp(-beta * V(q)) on [lo, hi].
inline std::vector<double> sample_gibbs_rejection(const std::function<double(double)>& v,
                                                  double beta, double lo, double hi, std::size_t n,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(lo, hi);
  std::uniform_real_distribution<double> uy(0.0, 1.0);
  double vmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 4096; ++i) {
    double x = lo + (hi - lo) * i / 4096.0;
    vmin = std::min(vmin, v(x));
  }
  std::vector<double> out;
  out.reserve(n);
  while (out.size() < n) {
    double x = ux(rng);
    if (uy(rng) <= std::exp(-beta * (v(x) - vmin))) out.push_back(x);
  }
  return out;
}

// Monte Carlo quadrature of delta * E_u[grad(u) grad(u)^T] with u uniform on
// the box [lo, hi]^d; the expectation defining the effective micro-scale
// noise covariance.
inline Mat micro_variance_quadrature(const effpot::PotentialOracle& micro, double delta, double lo,
                                     double hi, long long n_points, std::uint64_t seed) {
  const int d = micro.dim();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(lo, hi);
  Mat acc = Mat::Zero(d, d);
  Vec u(d), g(d);
  for (long long i = 0; i < n_points; ++i) {
    for (int c = 0; c < d; ++c) u[c] = unif(rng);
    micro.gradient(u, g);
    acc += g * g.transpose();
  }
  return delta * acc / static_cast<double>(n_points);
}

// Stationary normalized autocovariance of q for kinetic Langevin dynamics on
// V = q^2/2 with scalar friction gamma < 2 (underdamped).
inline double ou_acf(double gamma, double tau) {
  double w1 = std::sqrt(1.0 - 0.25 * gamma * gamma);
  return std::exp(-0.5 * gamma * tau) *
         (std::cos(w1 * tau) + 0.5 * gamma / w1 * std::sin(w1 * tau));
}

// Counts gradient evaluations; wraps another oracle.
class CountingOracle final : public effpot::PotentialOracle {
 public:
  explicit CountingOracle(const effpot::PotentialOracle& inner) : inner_(inner) {}
  int dim() const override { return inner_.dim(); }
  double value(const Vec& q) const override {
    ++value_calls;
    return inner_.value(q);
  }
  void gradient(const Vec& q, Vec& grad) const override {
    ++grad_calls;
    inner_.gradient(q, grad);
  }
  mutable long long value_calls = 0;
  mutable long long grad_calls = 0;

 private:
  const effpot::PotentialOracle& inner_;
};

}  // namespace oracles
