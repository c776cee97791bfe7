#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "effpot/equilibrium.hpp"
#include "effpot/integrators.hpp"
#include "effpot/potentials.hpp"
#include "support/oracles.hpp"

using namespace effpot;

namespace {

SampleSet samples_from(const std::vector<double>& ps, double delta = 0.1) {
  SampleSet s;
  s.qs = Mat::Zero(static_cast<Eigen::Index>(ps.size()), 1);
  s.ps.resize(static_cast<Eigen::Index>(ps.size()), 1);
  for (std::size_t i = 0; i < ps.size(); ++i) s.ps(static_cast<Eigen::Index>(i), 0) = ps[i];
  s.delta = delta;
  return s;
}

Mat column(const std::vector<double>& xs) {
  Mat m(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = xs[i];
  return m;
}

State state1(double q, double p) {
  State s;
  s.q = Vec::Constant(1, q);
  s.p = Vec::Constant(1, p);
  return s;
}

double linf_vs(const FittedPotential& fit, const std::function<double(double)>& ref, double lo,
               double hi, int n = 400) {
  // gauge-align both over the comparison window before taking the sup norm
  double fit_min = std::numeric_limits<double>::infinity();
  double ref_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    double x = lo + (hi - lo) * i / n;
    fit_min = std::min(fit_min, fit.value(Vec::Constant(1, x)));
    ref_min = std::min(ref_min, ref(x));
  }
  double linf = 0.0;
  for (int i = 0; i <= n; ++i) {
    double x = lo + (hi - lo) * i / n;
    double f = fit.value(Vec::Constant(1, x)) - fit_min;
    double r = ref(x) - ref_min;
    linf = std::max(linf, std::abs(f - r));
  }
  return linf;
}

}  // namespace

TEST_CASE("normality_test calibration on exact normal draws") {
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    auto draws = oracles::sample_gaussian(100000, 0.0, 1.0, seed);
    NormalityReport rep = normality_test(samples_from(draws), 0.01);
    CAPTURE(seed);
    CHECK(rep.verdict);
    CHECK(rep.per_dim_p[0] >= 0.01);
  }
}

TEST_CASE("normality_test rejects uniform momenta") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::vector<double> draws(100000);
  for (auto& v : draws) v = unif(rng);
  NormalityReport rep = normality_test(samples_from(draws), 0.01);
  CHECK_FALSE(rep.verdict);
  CHECK(rep.per_dim_p[0] < 1e-6);
}

TEST_CASE("normality_test needs enough samples") {
  auto draws = oracles::sample_gaussian(500, 0.0, 1.0, 1);
  CHECK_THROWS_AS(normality_test(samples_from(draws), 0.01), InsufficientDataError);
}

TEST_CASE("normality gate separates resolved from under-resolved step sizes") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad3Scale, {}});
  SUBCASE("large step: micro scales act as noise, momenta look Gaussian") {
    SimConfig cfg = SimConfig::isotropic(1, 0.5, 0.1, 4000000, 400000, 1);
    SampleSet s = simulate_damped(*pot.full, cfg, state1(-2.0, 0.0));
    NormalityReport rep = normality_test(s, 0.01);
    CHECK(rep.verdict);
  }
  SUBCASE("small step resolving every scale: deterministic decay, gate fails") {
    SimConfig cfg = SimConfig::isotropic(1, 0.002, 0.1, 2000000, 200000, 1);
    SampleSet s = simulate_damped(*pot.full, cfg, state1(-2.0, 0.0));
    NormalityReport rep = normality_test(s, 0.01);
    CHECK_FALSE(rep.verdict);
  }
}

TEST_CASE("estimate_beta on exact normal momenta") {
  auto n01 = oracles::sample_gaussian(2000000, 0.0, 1.0, 42);
  BetaEstimate b1 = estimate_beta(samples_from(n01));
  CHECK(b1.value == doctest::Approx(1.0).epsilon(0.02));
  CHECK_FALSE(b1.out_of_range);

  auto n02 = oracles::sample_gaussian(2000000, 0.0, 2.0, 43);
  BetaEstimate b2 = estimate_beta(samples_from(n02));
  CHECK(b2.value == doctest::Approx(0.25).epsilon(0.04));
  CHECK_FALSE(b2.out_of_range);  // 0.25 sits inside (0.2, 1.25)

  auto n03 = oracles::sample_gaussian(500000, 0.0, 3.0, 44);
  BetaEstimate b3 = estimate_beta(samples_from(n03));
  CHECK(b3.value == doctest::Approx(1.0 / 9.0).epsilon(0.05));
  CHECK(b3.out_of_range);
}

TEST_CASE("estimate_beta scaling law: p -> c p scales beta by 1/c^2") {
  auto draws = oracles::sample_gaussian(100000, 0.0, 0.8, 7);
  SampleSet s = samples_from(draws);
  BetaEstimate base = estimate_beta(s);
  const double c = 1.7;
  SampleSet scaled = s;
  scaled.ps *= c;
  BetaEstimate after = estimate_beta(scaled);
  CHECK(after.value == doctest::Approx(base.value / (c * c)).epsilon(1e-12));
}

TEST_CASE("estimate_beta degenerate and multi-d behavior") {
  std::vector<double> constant(5000, 0.37);
  CHECK_THROWS_AS(estimate_beta(samples_from(constant)), DegenerateDataError);

  SampleSet s2;
  s2.qs = Mat::Zero(4000, 2);
  s2.ps = Mat::Random(4000, 2);
  CHECK(estimate_beta(s2).value == 1.0);
}

TEST_CASE("quad3scale equilibrium beta_hat lands in the useful range") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad3Scale, {}});
  SimConfig cfg = SimConfig::isotropic(1, 0.5, 0.1, 4000000, 400000, 1);
  SampleSet s = simulate_damped(*pot.full, cfg, state1(-2.0, 0.0));
  BetaEstimate b = estimate_beta(s);
  CHECK(b.value > 0.2);
  CHECK(b.value < 1.25);
}

TEST_CASE("histogram: two bins on an explicit domain") {
  Mat samples = column({0.1, 0.1, 0.9, 0.9});
  Vec lo = Vec::Constant(1, 0.0), hi = Vec::Constant(1, 1.0);
  Histogram h = histogram_density(samples, {2}, std::make_pair(lo, hi));
  CHECK(h.counts[0] == 2);
  CHECK(h.counts[1] == 2);
  CHECK(h.density[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h.density[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("histogram normalization and counts") {
  auto draws = oracles::sample_gaussian(100000, 0.3, 1.3, 17);
  Histogram h = histogram_density(column(draws), {50});
  long long total = 0;
  double mass = 0.0;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    total += h.counts[i];
    mass += h.density[i] * h.bin_volume();
  }
  CHECK(total == 100000);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("histogram of exact Gibbs samples is close to the analytic density (KL)") {
  auto draws = oracles::sample_gaussian(1000000, 0.0, 1.0, 23);
  Histogram h = histogram_density(column(draws), {200});
  double kl = 0.0;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    if (h.counts[i] == 0) continue;
    Vec c = h.center(static_cast<long long>(i));
    double analytic = std::exp(-0.5 * c[0] * c[0]) / std::sqrt(2.0 * 3.14159265358979323846);
    kl += h.density[i] * h.bin_volume() * std::log(h.density[i] / analytic);
  }
  CHECK(kl < 1e-3);
}

TEST_CASE("fit_potential recovers the harmonic potential from exact Gibbs samples") {
  auto draws = oracles::sample_gaussian(1000000, 0.0, 1.0, 31);
  Histogram h = histogram_density(column(draws), {200});
  FitParams params;
  params.basis_size = 20;
  FittedPotential fit = fit_potential(h, 1.0, params);
  CHECK(linf_vs(fit, [](double x) { return 0.5 * x * x; }, -2.0, 2.0) <= 0.05);
  CHECK(fit.residual_rms < 0.02);
}

TEST_CASE("fit_potential on a flat density returns the zero potential") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> draws(500000);
  for (auto& v : draws) v = unif(rng);
  // explicit [0,1] binning: the auto domain pads beyond the support, which
  // correctly halves the density of the two boundary bins
  Vec lo = Vec::Constant(1, 0.0), hi = Vec::Constant(1, 1.0);
  Histogram h = histogram_density(column(draws), {100}, std::make_pair(lo, hi));
  FitParams params;
  params.basis_size = 12;
  FittedPotential fit = fit_potential(h, 1.0, params);
  double vmax = 0.0;
  for (int i = 0; i <= 200; ++i) {
    double x = fit.a + (fit.b - fit.a) * i / 200.0;
    vmax = std::max(vmax, std::abs(fit.value(Vec::Constant(1, x))));
  }
  CHECK(vmax < 0.03);
}

TEST_CASE("gauge invariance: scaling the density by a constant does not move the fit") {
  auto draws = oracles::sample_gaussian(200000, 0.0, 1.0, 77);
  Histogram h = histogram_density(column(draws), {120});
  FitParams params;
  params.basis_size = 16;
  FittedPotential fit1 = fit_potential(h, 1.0, params);
  Histogram scaled = h;
  for (auto& dens : scaled.density) dens *= 7.3;
  FittedPotential fit2 = fit_potential(scaled, 1.0, params);
  for (int i = 0; i <= 100; ++i) {
    double x = fit1.a + (fit1.b - fit1.a) * i / 100.0;
    CHECK(std::abs(fit1.value(Vec::Constant(1, x)) - fit2.value(Vec::Constant(1, x))) < 1e-10);
  }
}

TEST_CASE("histogram + fit composition recovers known potentials from exact samplers") {
  SUBCASE("harmonic") {
    auto draws = oracles::sample_gibbs_rejection(
        [](double x) { return 0.5 * x * x; }, 1.0, -5.0, 5.0, 600000, 2024);
    Histogram h = histogram_density(column(draws), {200});
    FitParams params;
    params.basis_size = 30;
    FittedPotential fit = fit_potential(h, 1.0, params);
    CHECK(linf_vs(fit, [](double x) { return 0.5 * x * x; }, -2.0, 2.0) <= 0.1);
  }
  SUBCASE("double well") {
    auto dw = [](double x) {
      double w = x * x - 1.0;
      return 0.25 * w * w;
    };
    auto draws = oracles::sample_gibbs_rejection(dw, 1.0, -3.5, 3.5, 600000, 2025);
    Histogram h = histogram_density(column(draws), {200});
    FitParams params;
    params.basis_size = 30;
    FittedPotential fit = fit_potential(h, 1.0, params);
    // density > 1e-3 region is roughly |x| < 1.9 at this temperature
    CHECK(linf_vs(fit, dw, -1.8, 1.8) <= 0.1);
  }
}

TEST_CASE("fit_potential errors") {
  SUBCASE("too few occupied bins for the basis") {
    auto draws = oracles::sample_gaussian(5000, 0.0, 1.0, 5);
    Histogram h = histogram_density(column(draws), {12});
    FitParams params;
    params.basis_size = 30;
    CHECK_THROWS_AS(fit_potential(h, 1.0, params), IllPosedFitError);
  }
  SUBCASE("interior gap leaves basis functions unsupported") {
    std::vector<double> xs;
    auto left = oracles::sample_gaussian(20000, -3.0, 0.3, 8);
    auto right = oracles::sample_gaussian(20000, 3.0, 0.3, 9);
    xs.insert(xs.end(), left.begin(), left.end());
    xs.insert(xs.end(), right.begin(), right.end());
    Histogram h = histogram_density(column(xs), {200});
    FitParams params;
    params.basis_size = 40;
    CHECK_THROWS_AS(fit_potential(h, 1.0, params), IllPosedFitError);
  }
  SUBCASE("invalid beta") {
    auto draws = oracles::sample_gaussian(5000, 0.0, 1.0, 5);
    Histogram h = histogram_density(column(draws), {20});
    CHECK_THROWS_AS(fit_potential(h, 0.0, FitParams{}), ConfigError);
  }
}

TEST_CASE("fitted potential: gradient is analytic and continuous at the boundary") {
  auto draws = oracles::sample_gaussian(200000, 0.0, 1.0, 55);
  Histogram h = histogram_density(column(draws), {150});
  FitParams params;
  params.basis_size = 18;
  FittedPotential fit = fit_potential(h, 1.0, params);
  OraclePtr oracle = fit.oracle();
  for (double x : {-2.0, -0.5, 0.0, 1.3, 2.5}) {
    Vec q = Vec::Constant(1, x);
    Vec fd = oracles::fd_gradient(*oracle, q, 1e-6);
    Vec an = oracle->gradient(q);
    CHECK(std::abs(an[0] - fd[0]) <= 1e-5 * std::max(1.0, std::abs(an[0])));
  }
  // quadratic continuation outside the domain keeps value and slope continuous
  double eps = 1e-9;
  CHECK(fit.value(Vec::Constant(1, fit.b + eps)) ==
        doctest::Approx(fit.value(Vec::Constant(1, fit.b - eps))).epsilon(1e-6));
  // and is confining far away
  CHECK(fit.value(Vec::Constant(1, fit.b + 10.0)) > fit.value(Vec::Constant(1, fit.b)) + 40.0);
}

TEST_CASE("fitted potential JSON round trip") {
  auto draws = oracles::sample_gaussian(100000, 0.0, 1.0, 66);
  Histogram h = histogram_density(column(draws), {100});
  FitParams params;
  params.basis_size = 14;
  FittedPotential fit = fit_potential(h, 0.8, params);
  FittedPotential back = FittedPotential::from_json(fit.to_json());
  CHECK(back.beta_hat == fit.beta_hat);
  CHECK(back.m == fit.m);
  for (double x : {-1.0, 0.0, 0.4, 2.0}) {
    CHECK(back.value(Vec::Constant(1, x)) == fit.value(Vec::Constant(1, x)));
  }
}

TEST_CASE("2D fit: bilinear surface recovers an anisotropic Gaussian well") {
  // exact Gibbs samples of V0(x, y) = 1/4 (2x+y-1)^2 + (x-y-1)^2 at beta 1:
  // Gaussian with mean (2/3, -1/3) and covariance H^-1
  Mat hess(2, 2);
  hess << 4.0, -1.0, -1.0, 2.5;
  Eigen::LLT<Mat> llt(hess.inverse());
  Mat l = llt.matrixL();
  std::mt19937_64 rng(808);
  std::normal_distribution<double> n01(0.0, 1.0);
  const long long n = 2000000;
  Mat samples(n, 2);
  Vec mean(2);
  mean << 2.0 / 3.0, -1.0 / 3.0;
  for (long long i = 0; i < n; ++i) {
    Vec z(2);
    z << n01(rng), n01(rng);
    samples.row(i) = (mean + l * z).transpose();
  }
  Histogram h = histogram_density(samples, {70, 70});
  FitParams params;
  FittedPotential fit = fit_potential(h, 1.0, params);

  // argmin node should sit at the analytic minimizer
  int imin = 0, jmin = 0;
  double vmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < fit.values.rows(); ++i) {
    for (int j = 0; j < fit.values.cols(); ++j) {
      if (fit.observed(i, j) && fit.values(i, j) < vmin) {
        vmin = fit.values(i, j);
        imin = i;
        jmin = j;
      }
    }
  }
  CHECK(std::abs(fit.xs[imin] - 2.0 / 3.0) < 0.1);
  CHECK(std::abs(fit.ys[jmin] - (-1.0 / 3.0)) < 0.1);

  // surface matches V0 (gauge-aligned) near the mode
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  OraclePtr v0 = pot.component("V0");
  double v0min = v0->value(mean);
  double max_err = 0.0;
  for (int i = 0; i < fit.values.rows(); ++i) {
    for (int j = 0; j < fit.values.cols(); ++j) {
      if (!fit.observed(i, j)) continue;
      Vec q(2);
      q << fit.xs[i], fit.ys[j];
      if ((q - mean).norm() > 1.0) continue;
      max_err = std::max(max_err, std::abs(fit.values(i, j) - (v0->value(q) - v0min)));
    }
  }
  CHECK(max_err < 0.15);
}

TEST_CASE("scale_scan: single passing delta yields a fitted quadratic") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad3Scale, {}});
  ScanParams params;
  params.gamma = 0.1;
  params.n_steps = 4000000;
  params.subsample = 2;
  params.init_q = Vec::Constant(1, -2.0);
  params.init_p = Vec::Zero(1);
  params.bins = 200;
  params.fit.basis_size = 30;
  auto entries = scale_scan(*pot.full, {0.5}, params, 1);
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].completed);
  CHECK(entries[0].normality.verdict);
  CHECK(entries[0].fitted);
  CHECK(linf_vs(entries[0].fit, [](double x) { return 0.5 * x * x; }, -1.5, 1.5) <= 0.15);
}

TEST_CASE("scale_scan: divergent entry is flagged, scan completes") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad3Scale, {}});
  ScanParams params;
  params.gamma = 0.1;
  params.n_steps = 200000;
  params.init_q = Vec::Constant(1, -2.0);
  params.init_p = Vec::Zero(1);
  // 3.0 exceeds the Verlet stability threshold for the unit-curvature macro
  // component; 0.5 is fine
  auto entries = scale_scan(*pot.full, {3.0, 0.5}, params, 2);
  REQUIRE(entries.size() == 2);
  CHECK_FALSE(entries[0].completed);
  CHECK(!entries[0].error.empty());
  CHECK(entries[1].completed);
}

TEST_CASE("scale_scan rejects non-decreasing deltas") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad3Scale, {}});
  ScanParams params;
  params.n_steps = 10000;
  CHECK_THROWS_AS(scale_scan(*pot.full, {0.1, 0.5}, params, 1), ConfigError);
}
