#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "effpot/errors.hpp"
#include "effpot/potentials.hpp"
#include "support/oracles.hpp"

using namespace effpot;

namespace {

Vec v1(double x) {
  Vec q(1);
  q << x;
  return q;
}

Vec v2(double x, double y) {
  Vec q(2);
  q << x, y;
  return q;
}

std::vector<Vec> grid_1d(double lo, double hi, int n) {
  std::vector<Vec> pts;
  for (int i = 0; i < n; ++i) pts.push_back(v1(lo + (hi - lo) * i / (n - 1)));
  return pts;
}

std::vector<Vec> random_points(int d, double lo, double hi, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(lo, hi);
  std::vector<Vec> pts;
  for (int i = 0; i < n; ++i) {
    Vec q(d);
    for (int c = 0; c < d; ++c) q[c] = unif(rng);
    pts.push_back(q);
  }
  return pts;
}

}  // namespace

TEST_CASE("quad3scale value at origin and paper parameters") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad3Scale, {{"eps1", 0.05}, {"eps2", 0.001}}});
  CHECK(pot.full->dim() == 1);
  CHECK(pot.full->value(v1(0.0)) == doctest::Approx(0.0).epsilon(1e-15));
  double expect = 0.5 + 0.05 * std::sin(20.0) + 0.001 * std::sin(1000.0);
  CHECK(pot.full->value(v1(1.0)) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("quad2d components at the origin") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {{"eps", 1e-5}}});
  CHECK(pot.full->dim() == 2);
  CHECK(pot.component("V0")->value(v2(0.0, 0.0)) == doctest::Approx(1.25).epsilon(1e-15));
  CHECK(pot.component("V1")->value(v2(0.0, 0.0)) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("muller-brown middle well is computed, not guessed") {
  Vec c = muller_brown_middle_well();
  BuiltinPotential pot = make_builtin({BuiltinKind::MullerBrown2D, {}});
  CHECK(c[0] == doctest::Approx(-0.05).epsilon(0.2));
  CHECK(c[1] == doctest::Approx(0.4667).epsilon(0.05));
  // V_q vanishes at the center, so the V0 gradient there is 0.1 * grad V_m = 0
  Vec g = pot.component("V0")->gradient(c);
  CHECK(g.norm() < 1e-6);
}

TEST_CASE("full potential equals sum of components at random points") {
  std::vector<BuiltinSpec> specs = {
      {BuiltinKind::Quad3Scale, {}},
      {BuiltinKind::DoubleWell3Scale, {}},
      {BuiltinKind::CosSum, {{"n_terms", 20}}},
      {BuiltinKind::Quad2D, {}},
      {BuiltinKind::MullerBrown2D, {}},
  };
  for (const auto& spec : specs) {
    CAPTURE(to_string(spec.kind));
    BuiltinPotential pot = make_builtin(spec);
    auto pts = random_points(pot.full->dim(), -2.0, 2.0, 100, 7771);
    for (const Vec& q : pts) {
      double sum = 0.0;
      for (const auto& comp : pot.components) sum += comp->value(q);
      double full = pot.full->value(q);
      CHECK(std::abs(full - sum) <= 1e-12 * std::max(1.0, std::abs(full)));
    }
  }
}

TEST_CASE("macro components are even") {
  BuiltinPotential quad = make_builtin({BuiltinKind::Quad3Scale, {}});
  BuiltinPotential dw = make_builtin({BuiltinKind::DoubleWell3Scale, {}});
  auto pts = random_points(1, -3.0, 3.0, 100, 99);
  for (const Vec& q : pts) {
    CHECK(quad.component("V0")->value(q) == doctest::Approx(quad.component("V0")->value(-q)));
    CHECK(dw.component("V0")->value(q) == doctest::Approx(dw.component("V0")->value(-q)));
  }
}

TEST_CASE("cossum with zero terms reduces to the quadratic") {
  BuiltinPotential pot = make_builtin({BuiltinKind::CosSum, {{"n_terms", 0}}});
  constexpr double pi = 3.14159265358979323846;
  for (double x : {-1.0, 0.0, 0.7, 3.0}) {
    double expect = 0.25 * (x - 0.5 * pi) * (x - 0.5 * pi);
    CHECK(pot.full->value(v1(x)) == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("gradient_check: quad3scale on [-2, 2]") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad3Scale, {}});
  auto report = gradient_check(*pot.full, grid_1d(-2.0, 2.0, 20), 1e-6);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("gradient_check: cossum N=20 at finer step") {
  BuiltinPotential pot = make_builtin({BuiltinKind::CosSum, {{"n_terms", 20}}});
  auto report = gradient_check(*pot.full, grid_1d(-1.0, 4.0, 20), 1e-7);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("gradient_check: mullerbrown2d with scale-adapted step") {
  BuiltinPotential pot = make_builtin({BuiltinKind::MullerBrown2D, {}});
  // eps = 1e-5 micro scale: central differences at step 1e-6 cannot resolve
  // it (truncation ~ h^2/eps^2); balance truncation against roundoff instead
  double h = std::cbrt(1e-16 * 1e-5 * 1e-5);
  auto report = gradient_check(*pot.full, random_points(2, -1.5, 1.5, 10, 4242), h);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("gradient matches the independent FD oracle for every builtin") {
  std::vector<std::pair<BuiltinSpec, double>> cases = {
      {{BuiltinKind::Quad3Scale, {}}, 1e-6},
      {{BuiltinKind::DoubleWell3Scale, {}}, 1e-6},
      {{BuiltinKind::CosSum, {{"n_terms", 5}}}, 1e-6},
      {{BuiltinKind::Quad2D, {}}, std::cbrt(1e-16 * 1e-10)},
      {{BuiltinKind::MullerBrown2D, {}}, std::cbrt(1e-16 * 1e-10)},
  };
  for (const auto& [spec, h] : cases) {
    CAPTURE(to_string(spec.kind));
    BuiltinPotential pot = make_builtin(spec);
    for (const Vec& q : random_points(pot.full->dim(), -1.5, 1.5, 8, 31337)) {
      Vec fd = oracles::fd_gradient(*pot.full, q, h);
      Vec an = pot.full->gradient(q);
      double scale = std::max(1.0, an.cwiseAbs().maxCoeff());
      CHECK((an - fd).cwiseAbs().maxCoeff() / scale <= 1e-5);
    }
  }
}

TEST_CASE("component oracles have analytic gradients too") {
  BuiltinPotential pot = make_builtin({BuiltinKind::MullerBrown2D, {}});
  for (const Vec& q : random_points(2, -1.0, 1.5, 6, 555)) {
    Vec fd = oracles::fd_gradient(*pot.component("V0"), q, 1e-6);
    Vec an = pot.component("V0")->gradient(q);
    CHECK((an - fd).cwiseAbs().maxCoeff() / std::max(1.0, an.cwiseAbs().maxCoeff()) <= 1e-5);
  }
}

TEST_CASE("configuration errors") {
  CHECK_THROWS_AS(builtin_kind_from_string("nope"), ConfigError);
  CHECK_THROWS_AS(make_builtin({BuiltinKind::Quad3Scale, {{"eps1", -0.1}}}), ConfigError);
  CHECK_THROWS_AS(make_builtin({BuiltinKind::Quad3Scale, {{"eps1", 0.001}, {"eps2", 0.05}}}),
                  ConfigError);
  CHECK_THROWS_AS(make_builtin({BuiltinKind::CosSum, {{"n_terms", -3}}}), ConfigError);
  CHECK_THROWS_AS(make_builtin({BuiltinKind::Quad2D, {{"eps", 0.0}}}), ConfigError);
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  CHECK_THROWS_AS(pot.component("V7"), ConfigError);
}

TEST_CASE("minimizer converges on the quad2d macro component") {
  BuiltinPotential pot = make_builtin({BuiltinKind::Quad2D, {}});
  auto res = minimize_gradient_descent(*pot.component("V0"), v2(0.0, 0.0), 1e-10);
  CHECK(res.converged);
  CHECK(res.x[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(res.x[1] == doctest::Approx(-1.0 / 3.0).epsilon(1e-6));
}
