#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "effpot/covariance.hpp"
#include "effpot/potentials.hpp"
#include "support/oracles.hpp"

using namespace effpot;

namespace {

Vec trace_rhs_for(const ProbePlan& plan, const Mat& z) {
  Vec rhs(static_cast<Eigen::Index>(plan.probes.size()));
  for (std::size_t k = 0; k < plan.probes.size(); ++k) {
    rhs[static_cast<Eigen::Index>(k)] = (z * plan.probes[k]).trace();
  }
  return rhs;
}

Mat random_spd(int d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n01(rng);
  Mat s = a * a.transpose() / d;
  return scale * (s + 0.05 * Mat::Identity(d, d));
}

}  // namespace

TEST_CASE("probe plan structure") {
  SUBCASE("d = 1: a single unit probe") {
    ProbePlan plan = build_probe_plan(1, 0.1);
    REQUIRE(plan.probes.size() == 1);
    CHECK(plan.probes[0](0, 0) == 1.0);
  }
  SUBCASE("d = 2 matches the documented probe family") {
    ProbePlan plan = build_probe_plan(2, 0.1);
    REQUIRE(plan.probes.size() == 3);
    CHECK(plan.probes[0](0, 0) == 2.0);
    CHECK(plan.probes[0](1, 1) == 1.0);
    CHECK(plan.probes[1](0, 0) == 1.0);
    CHECK(plan.probes[1](1, 1) == 2.0);
    CHECK(plan.probes[2](0, 1) == 0.5);
    CHECK(plan.probes[2](1, 0) == 0.5);
    CHECK(plan.probes[2](0, 0) == 1.0);
  }
  SUBCASE("d = 3: six symmetric PD probes") {
    ProbePlan plan = build_probe_plan(3, 0.1);
    REQUIRE(plan.probes.size() == 6);
    for (const Mat& a : plan.probes) {
      CHECK((a - a.transpose()).norm() == 0.0);
      Eigen::SelfAdjointEigenSolver<Mat> es(a);
      CHECK(es.eigenvalues().minCoeff() >= 0.5 - 1e-12);
    }
  }
  SUBCASE("rejects bad arguments") {
    CHECK_THROWS_AS(build_probe_plan(0, 0.1), ConfigError);
    CHECK_THROWS_AS(build_probe_plan(2, 0.0), ConfigError);
  }
}

TEST_CASE("solve_covariance round trip is exact for random symmetric Z") {
  std::mt19937_64 rng(321);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int d : {1, 2, 3, 5}) {
    ProbePlan plan = build_probe_plan(d, 0.1);
    for (int rep = 0; rep < 10; ++rep) {
      Mat z = random_spd(d, rng);
      CovarianceEstimate est = solve_covariance(plan, trace_rhs_for(plan, z));
      CAPTURE(d);
      CHECK((est.z - z).norm() <= 1e-12 * std::max(1.0, z.norm()));
      CHECK_FALSE(est.projected);
    }
  }
}

TEST_CASE("solve_covariance: scalar case and PSD projection") {
  SUBCASE("d = 1 identity") {
    ProbePlan plan = build_probe_plan(1, 0.1);
    Vec rhs(1);
    rhs << 0.08;
    CovarianceEstimate est = solve_covariance(plan, rhs);
    CHECK(est.z(0, 0) == doctest::Approx(0.08).epsilon(1e-15));
    CHECK(est.rhs[0] == doctest::Approx(0.04).epsilon(1e-15));
  }
  SUBCASE("indefinite raw estimate is clipped and flagged") {
    ProbePlan plan = build_probe_plan(2, 0.1);
    Mat z(2, 2);
    z << 0.01, 0.2, 0.2, 0.01;  // strongly indefinite
    CovarianceEstimate est = solve_covariance(plan, trace_rhs_for(plan, z));
    CHECK(est.projected);
    CHECK(est.projection_correction > 0.0);
    Eigen::SelfAdjointEigenSolver<Mat> es(est.z);
    CHECK(es.eigenvalues().minCoeff() >= -1e-15);
  }
  SUBCASE("rhs length mismatch") {
    ProbePlan plan = build_probe_plan(2, 0.1);
    CHECK_THROWS_AS(solve_covariance(plan, Vec::Ones(2)), ConfigError);
  }
}

TEST_CASE("friction is half the covariance") {
  ProbePlan plan = build_probe_plan(2, 0.1);
  Mat z(2, 2);
  z << 2.0, 0.5, 0.5, 1.0;
  CovarianceEstimate est = solve_covariance(plan, trace_rhs_for(plan, z));
  Mat gamma = friction_from_covariance(est);
  CHECK(gamma(0, 0) == doctest::Approx(1.0));
  CHECK(gamma(0, 1) == doctest::Approx(0.25));
  CHECK(gamma(1, 1) == doctest::Approx(0.5));

  CovarianceEstimate id_est = solve_covariance(plan, trace_rhs_for(plan, 2.0 * Mat::Identity(2, 2)));
  CHECK((friction_from_covariance(id_est) - Mat::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("measure_rhs: deterministic damped run with no micro scale decays to zero") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  OraclePtr v0 = pot.component("V0");  // smooth macro potential only
  ProbeRunParams params;
  params.delta = 0.05;
  params.n_steps = 200000;
  params.burn_in = 100000;
  params.init_q = Vec::Zero(2);
  params.init_p = Vec::Constant(2, 0.7);
  RhsMeasurement m = measure_rhs(*v0, Mat::Identity(2, 2), 0.1, params);
  CHECK(m.trace_estimate < 1e-6);
}

TEST_CASE("energy-balance identity on an explicitly stochastic system") {
  // Known anisotropic Sigma injected into the damped update; the measured
  // 2 gamma E[p^T M^-2 p] must reproduce Tr(Z M^-1) for random PD probes.
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  OraclePtr v0 = pot.component("V0");
  Mat z(2, 2);
  z << 0.08, 0.02, 0.02, 0.04;
  Eigen::LLT<Mat> llt(z);
  Mat sigma = llt.matrixL();

  std::mt19937_64 rng(1117);
  for (int k = 0; k < 5; ++k) {
    Mat probe = random_spd(2, rng, 1.0);
    ProbeRunParams params;
    params.delta = 0.02;
    params.n_steps = 4000000;
    params.burn_in = 400000;
    params.seed = 1000 + static_cast<std::uint64_t>(k);
    params.init_q = Vec::Zero(2);
    params.init_p = Vec::Zero(2);
    params.injected_sigma = sigma;
    RhsMeasurement m = measure_rhs(*v0, probe, 0.1, params);
    double expected = (z * probe).trace();
    CAPTURE(k);
    CHECK(std::abs(m.trace_estimate - expected) <= 3.0 * m.stderr_trace + 0.02 * expected);
    // the raw moment diagnostic is half the trace estimate by construction
    CHECK(m.gamma_p_moment == doctest::Approx(0.5 * m.trace_estimate));
  }
}

TEST_CASE("isotropic synthetic check: Tr(Z) from gamma E[|p|^2]") {
  // sigma^2 = 0.04 isotropic in 2D: Tr(Z) = 0.08
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  OraclePtr v0 = pot.component("V0");
  Mat sigma = 0.2 * Mat::Identity(2, 2);
  ProbeRunParams params;
  params.delta = 0.02;
  params.n_steps = 4000000;
  params.burn_in = 400000;
  params.seed = 9;
  params.injected_sigma = sigma;
  RhsMeasurement m = measure_rhs(*v0, Mat::Identity(2, 2), 0.1, params);
  CHECK(std::abs(m.trace_estimate - 0.08) <= 3.0 * m.stderr_trace + 0.002);
}

TEST_CASE("full estimation pipeline on injected anisotropic noise") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  OraclePtr v0 = pot.component("V0");
  Mat z(2, 2);
  z << 0.08, 0.02, 0.02, 0.04;
  Eigen::LLT<Mat> llt(z);
  ProbePlan plan = build_probe_plan(2, 0.1);
  CovPipelineParams params;
  params.run.delta = 0.02;
  params.run.n_steps = 4000000;
  params.run.seed = 77;
  params.run.injected_sigma = Mat(llt.matrixL());
  params.jobs = 2;
  CovarianceEstimate est = estimate_covariance(*v0, plan, params);
  CHECK((est.z - z).norm() / z.norm() < 0.10);
}

TEST_CASE("probe runs are order-independent for fixed seeds") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  OraclePtr v0 = pot.component("V0");
  Mat sigma = 0.2 * Mat::Identity(2, 2);
  ProbePlan plan = build_probe_plan(2, 0.1);
  CovPipelineParams params;
  params.run.delta = 0.02;
  params.run.n_steps = 200000;
  params.run.seed = 5;
  params.run.injected_sigma = sigma;
  params.jobs = 1;
  CovarianceEstimate serial = estimate_covariance(*v0, plan, params);
  params.jobs = 3;
  CovarianceEstimate parallel = estimate_covariance(*v0, plan, params);
  CHECK((serial.z - parallel.z).norm() == 0.0);
  CHECK((serial.trace_rhs - parallel.trace_rhs).norm() == 0.0);
}

TEST_CASE("deterministic large-step pipeline matches the quadrature oracle (quad2d)") {
  // Full stage 1 on the real multiscale potential: the effective noise
  // covariance of the under-resolved scale, checked against the independent
  // Monte Carlo quadrature of delta * E[grad V1 (x) grad V1].
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {{"eps", 1e-5}}});
  const double delta = 0.05, gamma = 0.1;
  ProbePlan plan = build_probe_plan(2, gamma);
  CovPipelineParams params;
  params.run.delta = delta;
  params.run.n_steps = 4000000;  // desk-scale: acceptance runs the full 2e7
  params.run.seed = 31;
  params.run.init_q = Vec::Zero(2);
  params.run.init_p = Vec::Zero(2);
  params.jobs = 2;
  CovarianceEstimate est = estimate_covariance(*pot.full, plan, params);

  Mat z_oracle = oracles::micro_variance_quadrature(*pot.component("V1"), delta, 0.0, 1.0,
                                                    2000000, 1234);
  CAPTURE(est.z);
  CAPTURE(z_oracle);
  CHECK((est.z - z_oracle).norm() / z_oracle.norm() < 0.25);

  // the auxiliary rectangle is unspecified; a different O(1) box gives the
  // same limit for these trigonometric micro scales
  Mat z_oracle_sym = oracles::micro_variance_quadrature(*pot.component("V1"), delta, -1.0, 1.0,
                                                        2000000, 4321);
  CHECK((z_oracle_sym - z_oracle).norm() / z_oracle.norm() < 0.02);

  // PSD projection, if it fired at all, must be a small correction
  if (est.projected) {
    CHECK(est.projection_correction < 0.1 * est.z.norm());
  }
}

TEST_CASE("covariance estimate JSON round trip") {
  ProbePlan plan = build_probe_plan(2, 0.1);
  Mat z(2, 2);
  z << 0.05, 0.025, 0.025, 0.025;
  CovarianceEstimate est = solve_covariance(plan, trace_rhs_for(plan, z), Vec::Ones(3) * 1e-3);
  CovarianceEstimate back = CovarianceEstimate::from_json(est.to_json());
  CHECK((back.z - est.z).norm() == 0.0);
  CHECK((back.trace_rhs - est.trace_rhs).norm() == 0.0);
  CHECK(back.plan.gamma == est.plan.gamma);
  REQUIRE(back.plan.probes.size() == est.plan.probes.size());
  CHECK((back.plan.probes[2] - est.plan.probes[2]).norm() == 0.0);
}

TEST_CASE("measure_rhs validates its inputs") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  ProbeRunParams params;
  params.delta = 0.05;
  params.n_steps = 1000;
  Mat not_pd(2, 2);
  not_pd << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(measure_rhs(*pot.full, not_pd, 0.1, params), ConfigError);
  CHECK_THROWS_AS(measure_rhs(*pot.full, Mat::Identity(2, 2), -0.1, params), ConfigError);
}
