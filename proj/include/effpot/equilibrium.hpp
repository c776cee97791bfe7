#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "effpot/integrators.hpp"
#include "effpot/potentials.hpp"

namespace effpot {

// Jarque-Bera normality check of the momentum marginals. The sample is
// thinned before testing: equilibrium momenta are autocorrelated and the test
// assumes independent draws.
struct NormalityReport {
  Vec per_dim_stat;
  Vec per_dim_p;
  double cross_corr_max = 0.0;
  bool verdict = false;
  double threshold = 0.0;
  long long n_used = 0;
  long long stride = 1;
  double tau_int = 1.0;

  nlohmann::json to_json() const;
};

// max_points bounds the thinned test size (hard cap 1e6). The default keeps
// the test powerful against grossly non-Gaussian momenta (uniform, bimodal,
// decayed oscillations) while tolerating the O(delta)-level moment deviations
// every finite-step equilibrium carries: with n points the detectable excess
// kurtosis is ~3 sqrt(24/n), i.e. ~0.1 at the default.
NormalityReport normality_test(const SampleSet& samples, double threshold,
                               long long max_points = 20000);

struct BetaEstimate {
  double value = 1.0;
  double var_p = 0.0;
  bool out_of_range = false;  // outside (0.2, 1.25)
};

// 1D: reciprocal of the unbiased momentum sample variance. Multi-dimensional
// sample sets return the calibrated temperature 1.
BetaEstimate estimate_beta(const SampleSet& samples);

struct Histogram {
  std::vector<Vec> edges;  // per dimension, uniform, size bins+1
  std::vector<long long> counts;
  std::vector<double> density;
  long long total = 0;
  long long dropped = 0;  // samples outside an explicit domain

  int dims() const { return static_cast<int>(edges.size()); }
  int bins(int d) const { return static_cast<int>(edges[d].size()) - 1; }
  double bin_width(int d) const { return edges[d][1] - edges[d][0]; }
  double bin_volume() const;
  long long flat_index(const std::vector<int>& idx) const;
  Vec center(long long flat) const;
};

// Uniform histogram over [min, max] per dimension (padded 1%), or over an
// explicit domain; samples outside an explicit domain are dropped.
Histogram histogram_density(const Mat& samples, const std::vector<int>& bins_per_dim,
                            const std::optional<std::pair<Vec, Vec>>& domain = std::nullopt);

// Learned effective potential: cubic B-spline in 1D, bilinear on the
// histogram grid in 2D. Usable as a PotentialOracle; outside the fitted
// domain the value continues quadratically (boundary tangent plus a 1/2 d^2
// confining term) so surrogate trajectories cannot escape to -infinity.
struct FittedPotential {
  enum class Basis { BSpline1D, Bilinear2D };
  Basis basis = Basis::BSpline1D;
  double beta_hat = 1.0;
  double gauge = 0.0;
  double residual_rms = 0.0;

  // 1D spline: m basis functions, clamped uniform knots on [a, b]
  double a = 0.0, b = 0.0;
  int m = 0;
  Vec coeffs;

  // 2D grid (nodes at histogram bin centers)
  Vec xs, ys;
  Mat values;  // values(i, j) at (xs[i], ys[j])
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> observed;
  double cap = 0.0;

  int dim() const { return basis == Basis::BSpline1D ? 1 : 2; }
  std::pair<Vec, Vec> domain() const;
  double value(const Vec& q) const;
  void gradient(const Vec& q, Vec& grad) const;
  OraclePtr oracle() const;

  nlohmann::json to_json() const;
  static FittedPotential from_json(const nlohmann::json& j);
};

struct FitParams {
  int basis_size = 30;
  long long bin_floor = 5;
  int smooth_passes = 1;  // 2D only
};

FittedPotential fit_potential(const Histogram& hist, double beta_hat, const FitParams& params);

// One entry of the step-size scan (Remark-style sweep over decreasing deltas).
struct ScanEntry {
  double delta = 0.0;
  bool completed = false;
  std::string error;
  NormalityReport normality;
  double beta_hat = 1.0;
  bool beta_warning = false;
  bool fitted = false;
  FittedPotential fit;
};

struct ScanParams {
  double gamma = 0.1;
  long long n_steps = 0;
  long long burn_in = -1;  // -1: 10% of n_steps
  long long subsample = 1;
  std::uint64_t seed = 0;
  Vec init_q, init_p;
  int bins = 200;
  FitParams fit;
  double normality_threshold = 0.01;
  long long normality_max_points = 20000;
};

// Simulates and tests each delta independently; a potential is fitted only
// where the normality gate passes. Per-entry failures (divergence) are
// recorded without aborting the scan.
std::vector<ScanEntry> scale_scan(const PotentialOracle& oracle, const std::vector<double>& deltas,
                                  const ScanParams& params, int jobs = 1);

// Cubic B-spline basis with clamped uniform knots; m >= 4 basis functions.
struct BSplineBasis {
  double a = 0.0, b = 0.0;
  int m = 0;

  BSplineBasis(double a, double b, int m);
  double knot(int i) const;
  // Values (and optionally derivatives) of the four basis functions active at
  // x; `first` is the index of the first active one.
  void eval(double x, int& first, std::array<double, 4>& vals,
            std::array<double, 4>* ders = nullptr) const;
};

void write_histogram_csv(const std::string& path, const Histogram& hist);

}  // namespace effpot
