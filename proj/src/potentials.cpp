#include "effpot/potentials.hpp"

#include <cmath>
#include <functional>
#include <mutex>

#include "effpot/errors.hpp"

namespace effpot {

namespace {

// Generic component oracle backed by callables. Only used for the per-scale
// component views; the full built-ins below are concrete classes.
class FunctionOracle final : public PotentialOracle {
 public:
  FunctionOracle(int dim, std::string name, std::function<double(const Vec&)> value,
                 std::function<void(const Vec&, Vec&)> grad)
      : dim_(dim), name_(std::move(name)), value_(std::move(value)), grad_(std::move(grad)) {}

  int dim() const override { return dim_; }
  double value(const Vec& q) const override { return value_(q); }
  void gradient(const Vec& q, Vec& grad) const override { grad_(q, grad); }
  std::string name() const override { return name_; }

 private:
  int dim_;
  std::string name_;
  std::function<double(const Vec&)> value_;
  std::function<void(const Vec&, Vec&)> grad_;
};

class Quad3Scale final : public PotentialOracle {
 public:
  Quad3Scale(double eps1, double eps2) : eps1_(eps1), eps2_(eps2) {}
  int dim() const override { return 1; }
  double value(const Vec& q) const override {
    double x = q[0];
    return 0.5 * x * x + eps1_ * std::sin(x / eps1_) + eps2_ * std::sin(x / eps2_);
  }
  void gradient(const Vec& q, Vec& grad) const override {
    double x = q[0];
    grad[0] = x + std::cos(x / eps1_) + std::cos(x / eps2_);
  }
  std::string name() const override { return "quad3scale"; }

 private:
  double eps1_, eps2_;
};

class DoubleWell3Scale final : public PotentialOracle {
 public:
  DoubleWell3Scale(double eps1, double eps2) : eps1_(eps1), eps2_(eps2) {}
  int dim() const override { return 1; }
  double value(const Vec& q) const override {
    double x = q[0];
    double w = x * x - 1.0;
    return 0.25 * w * w + eps1_ * std::sin(x / eps1_) + eps2_ * std::sin(x / eps2_);
  }
  void gradient(const Vec& q, Vec& grad) const override {
    double x = q[0];
    grad[0] = (x * x - 1.0) * x + std::cos(x / eps1_) + std::cos(x / eps2_);
  }
  std::string name() const override { return "doublewell3scale"; }

 private:
  double eps1_, eps2_;
};

constexpr double kPi = 3.14159265358979323846;

class CosSum final : public PotentialOracle {
 public:
  explicit CosSum(int n_terms) : n_(n_terms) {}
  int dim() const override { return 1; }
  double value(const Vec& q) const override {
    double x = q[0];
    double v = 0.25 * (x - 0.5 * kPi) * (x - 0.5 * kPi);
    for (int i = 1; i <= n_; ++i) {
      double ii = static_cast<double>(i) * i;
      v += std::cos(ii * x) / ii;
    }
    return v;
  }
  void gradient(const Vec& q, Vec& grad) const override {
    double x = q[0];
    double g = 0.5 * (x - 0.5 * kPi);
    for (int i = 1; i <= n_; ++i) {
      double ii = static_cast<double>(i) * i;
      g -= std::sin(ii * x);
    }
    grad[0] = g;
  }
  std::string name() const override { return "cossum"; }

 private:
  int n_;
};

class Quad2D final : public PotentialOracle {
 public:
  explicit Quad2D(double eps) : eps_(eps) {}
  int dim() const override { return 2; }
  double value(const Vec& q) const override {
    double x = q[0], y = q[1];
    double u = 2.0 * x + y - 1.0;
    double w = x - y - 1.0;
    return 0.25 * u * u + w * w + eps_ * (std::sin(x / eps_) + std::sin((x + y) / eps_));
  }
  void gradient(const Vec& q, Vec& grad) const override {
    double x = q[0], y = q[1];
    double u = 2.0 * x + y - 1.0;
    double w = x - y - 1.0;
    double cxy = std::cos((x + y) / eps_);
    grad[0] = u + 2.0 * w + std::cos(x / eps_) + cxy;
    grad[1] = 0.5 * u - 2.0 * w + cxy;
  }
  std::string name() const override { return "quad2d"; }

 private:
  double eps_;
};

struct MullerBrownTerms {
  // Standard four-Gaussian Muller-Brown surface.
  static constexpr double A[4] = {-200.0, -100.0, -170.0, 15.0};
  static constexpr double a[4] = {-1.0, -1.0, -6.5, 0.7};
  static constexpr double b[4] = {0.0, 0.0, 11.0, 0.6};
  static constexpr double c[4] = {-10.0, -10.0, -6.5, 0.7};
  static constexpr double x0[4] = {1.0, 0.0, -0.5, -1.0};
  static constexpr double y0[4] = {0.0, 0.5, 1.5, 1.0};

  static double value(double x, double y) {
    double v = 0.0;
    for (int k = 0; k < 4; ++k) {
      double dx = x - x0[k], dy = y - y0[k];
      v += A[k] * std::exp(a[k] * dx * dx + b[k] * dx * dy + c[k] * dy * dy);
    }
    return v;
  }
  static void gradient(double x, double y, double& gx, double& gy) {
    gx = 0.0;
    gy = 0.0;
    for (int k = 0; k < 4; ++k) {
      double dx = x - x0[k], dy = y - y0[k];
      double e = A[k] * std::exp(a[k] * dx * dx + b[k] * dx * dy + c[k] * dy * dy);
      gx += e * (2.0 * a[k] * dx + b[k] * dy);
      gy += e * (b[k] * dx + 2.0 * c[k] * dy);
    }
  }
};

// 0.1 * (quadratic leveling term + Muller-Brown) plus an anisotropic
// micro-scale ripple. The leveling term is centered at the middle well so the
// three wells end up at comparable depths.
class MullerBrown2D final : public PotentialOracle {
 public:
  MullerBrown2D(double eps, double xc, double yc) : eps_(eps), xc_(xc), yc_(yc) {}
  int dim() const override { return 2; }
  double value(const Vec& q) const override {
    double x = q[0], y = q[1];
    double vq = 35.0136 * (x - xc_) * (x - xc_) + 59.8399 * (y - yc_) * (y - yc_);
    double v0 = 0.1 * (vq + MullerBrownTerms::value(x, y));
    return v0 + eps_ * (std::sin(x / eps_) + std::sin((-x + y) / eps_));
  }
  void gradient(const Vec& q, Vec& grad) const override {
    double x = q[0], y = q[1];
    double gmx, gmy;
    MullerBrownTerms::gradient(x, y, gmx, gmy);
    double cyx = std::cos((-x + y) / eps_);
    grad[0] = 0.1 * (2.0 * 35.0136 * (x - xc_) + gmx) + std::cos(x / eps_) - cyx;
    grad[1] = 0.1 * (2.0 * 59.8399 * (y - yc_) + gmy) + cyx;
  }
  std::string name() const override { return "mullerbrown2d"; }

 private:
  double eps_;
  double xc_, yc_;
};

OraclePtr sine_scale_component(double eps, const std::string& name) {
  return std::make_shared<FunctionOracle>(
      1, name, [eps](const Vec& q) { return eps * std::sin(q[0] / eps); },
      [eps](const Vec& q, Vec& g) { g[0] = std::cos(q[0] / eps); });
}

void require_positive(double v, const std::string& what) {
  if (!(v > 0.0)) throw ConfigError("potential parameter " + what + " must be > 0");
}

}  // namespace

BuiltinKind builtin_kind_from_string(const std::string& s) {
  if (s == "quad3scale") return BuiltinKind::Quad3Scale;
  if (s == "doublewell3scale") return BuiltinKind::DoubleWell3Scale;
  if (s == "cossum") return BuiltinKind::CosSum;
  if (s == "quad2d") return BuiltinKind::Quad2D;
  if (s == "mullerbrown2d") return BuiltinKind::MullerBrown2D;
  throw ConfigError("unknown potential kind: " + s);
}

std::string to_string(BuiltinKind kind) {
  switch (kind) {
    case BuiltinKind::Quad3Scale: return "quad3scale";
    case BuiltinKind::DoubleWell3Scale: return "doublewell3scale";
    case BuiltinKind::CosSum: return "cossum";
    case BuiltinKind::Quad2D: return "quad2d";
    case BuiltinKind::MullerBrown2D: return "mullerbrown2d";
  }
  throw ConfigError("unknown potential kind enum");
}

OraclePtr BuiltinPotential::component(const std::string& name) const {
  for (std::size_t i = 0; i < component_names.size(); ++i) {
    if (component_names[i] == name) return components[i];
  }
  throw ConfigError("potential has no component named '" + name + "'");
}

BuiltinPotential make_builtin(const BuiltinSpec& spec) {
  BuiltinPotential out;
  switch (spec.kind) {
    case BuiltinKind::Quad3Scale:
    case BuiltinKind::DoubleWell3Scale: {
      bool dw = spec.kind == BuiltinKind::DoubleWell3Scale;
      double eps1 = spec.param_or("eps1", dw ? 0.025 : 0.05);
      double eps2 = spec.param_or("eps2", 0.001);
      require_positive(eps1, "eps1");
      require_positive(eps2, "eps2");
      if (!(eps1 > eps2)) throw ConfigError("scale parameters must satisfy eps1 > eps2 > 0");
      if (dw) {
        out.full = std::make_shared<DoubleWell3Scale>(eps1, eps2);
        out.components.push_back(std::make_shared<FunctionOracle>(
            1, "V0",
            [](const Vec& q) {
              double w = q[0] * q[0] - 1.0;
              return 0.25 * w * w;
            },
            [](const Vec& q, Vec& g) { g[0] = (q[0] * q[0] - 1.0) * q[0]; }));
      } else {
        out.full = std::make_shared<Quad3Scale>(eps1, eps2);
        out.components.push_back(std::make_shared<FunctionOracle>(
            1, "V0", [](const Vec& q) { return 0.5 * q[0] * q[0]; },
            [](const Vec& q, Vec& g) { g[0] = q[0]; }));
      }
      out.component_names = {"V0", "V1", "V2"};
      out.components.push_back(sine_scale_component(eps1, "V1"));
      out.components.push_back(sine_scale_component(eps2, "V2"));
      break;
    }
    case BuiltinKind::CosSum: {
      double n_raw = spec.param_or("n_terms", 20.0);
      int n = static_cast<int>(n_raw);
      if (n < 0 || n != n_raw) throw ConfigError("cossum n_terms must be a nonnegative integer");
      out.full = std::make_shared<CosSum>(n);
      out.components.push_back(std::make_shared<FunctionOracle>(
          1, "V0",
          [](const Vec& q) {
            double d = q[0] - 0.5 * kPi;
            return 0.25 * d * d;
          },
          [](const Vec& q, Vec& g) { g[0] = 0.5 * (q[0] - 0.5 * kPi); }));
      out.component_names = {"V0"};
      for (int i = 1; i <= n; ++i) {
        double ii = static_cast<double>(i) * i;
        out.components.push_back(std::make_shared<FunctionOracle>(
            1, "V" + std::to_string(i),
            [ii](const Vec& q) { return std::cos(ii * q[0]) / ii; },
            [ii](const Vec& q, Vec& g) { g[0] = -std::sin(ii * q[0]); }));
        out.component_names.push_back("V" + std::to_string(i));
      }
      break;
    }
    case BuiltinKind::Quad2D: {
      double eps = spec.param_or("eps", 1e-5);
      require_positive(eps, "eps");
      out.full = std::make_shared<Quad2D>(eps);
      out.components.push_back(std::make_shared<FunctionOracle>(
          2, "V0",
          [](const Vec& q) {
            double u = 2.0 * q[0] + q[1] - 1.0;
            double w = q[0] - q[1] - 1.0;
            return 0.25 * u * u + w * w;
          },
          [](const Vec& q, Vec& g) {
            double u = 2.0 * q[0] + q[1] - 1.0;
            double w = q[0] - q[1] - 1.0;
            g[0] = u + 2.0 * w;
            g[1] = 0.5 * u - 2.0 * w;
          }));
      out.components.push_back(std::make_shared<FunctionOracle>(
          2, "V1",
          [eps](const Vec& q) {
            return eps * (std::sin(q[0] / eps) + std::sin((q[0] + q[1]) / eps));
          },
          [eps](const Vec& q, Vec& g) {
            double cxy = std::cos((q[0] + q[1]) / eps);
            g[0] = std::cos(q[0] / eps) + cxy;
            g[1] = cxy;
          }));
      out.component_names = {"V0", "V1"};
      break;
    }
    case BuiltinKind::MullerBrown2D: {
      double eps = spec.param_or("eps", 1e-5);
      require_positive(eps, "eps");
      Vec c = muller_brown_middle_well();
      double xc = spec.param_or("xc", c[0]);
      double yc = spec.param_or("yc", c[1]);
      out.full = std::make_shared<MullerBrown2D>(eps, xc, yc);
      out.components.push_back(std::make_shared<FunctionOracle>(
          2, "V0",
          [xc, yc](const Vec& q) {
            double x = q[0], y = q[1];
            double vq = 35.0136 * (x - xc) * (x - xc) + 59.8399 * (y - yc) * (y - yc);
            return 0.1 * (vq + MullerBrownTerms::value(x, y));
          },
          [xc, yc](const Vec& q, Vec& g) {
            double gmx, gmy;
            MullerBrownTerms::gradient(q[0], q[1], gmx, gmy);
            g[0] = 0.1 * (2.0 * 35.0136 * (q[0] - xc) + gmx);
            g[1] = 0.1 * (2.0 * 59.8399 * (q[1] - yc) + gmy);
          }));
      out.components.push_back(std::make_shared<FunctionOracle>(
          2, "V1",
          [eps](const Vec& q) {
            return eps * (std::sin(q[0] / eps) + std::sin((-q[0] + q[1]) / eps));
          },
          [eps](const Vec& q, Vec& g) {
            double cyx = std::cos((-q[0] + q[1]) / eps);
            g[0] = std::cos(q[0] / eps) - cyx;
            g[1] = cyx;
          }));
      out.component_names = {"V0", "V1"};
      break;
    }
  }
  return out;
}

GradientCheckReport gradient_check(const PotentialOracle& oracle, const std::vector<Vec>& points,
                                   double fd_step) {
  GradientCheckReport report;
  report.fd_step = fd_step;
  int d = oracle.dim();
  Vec g(d), qp(d), qm(d), fd(d);
  for (const Vec& q : points) {
    if (q.size() != d) throw ContractError("gradient_check: point dimension mismatch");
    if (!q.allFinite()) throw ContractError("gradient_check: non-finite probe point");
    oracle.gradient(q, g);
    for (int i = 0; i < d; ++i) {
      qp = q;
      qm = q;
      qp[i] += fd_step;
      qm[i] -= fd_step;
      fd[i] = (oracle.value(qp) - oracle.value(qm)) / (2.0 * fd_step);
    }
    double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
    double err = (g - fd).cwiseAbs().maxCoeff() / scale;
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_point = q;
    }
  }
  return report;
}

MinimizeResult minimize_gradient_descent(const PotentialOracle& oracle, const Vec& start,
                                         double grad_tol, int max_iter) {
  const int d = oracle.dim();
  Vec x = start;
  Vec g(d), trial(d);
  double fx = oracle.value(x);
  double step = 1e-3;
  int iter = 0;
  // Armijo descent down to where function decrements approach roundoff
  const double coarse_tol = std::max(grad_tol, 1e-5);
  for (; iter < max_iter; ++iter) {
    oracle.gradient(x, g);
    double gn = g.norm();
    if (gn < coarse_tol) break;
    double t = step;
    double g2 = gn * gn;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      trial = x - t * g;
      double ft = oracle.value(trial);
      if (ft <= fx - 1e-4 * t * g2) {
        x = trial;
        fx = ft;
        step = t * 2.0;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  // Newton polish: finite-difference Hessian of the analytic gradient
  const double h = 1e-6;
  Vec gp(d), gm(d), xp(d), xm(d);
  for (int it = 0; it < 100; ++it) {
    oracle.gradient(x, g);
    if (g.norm() < grad_tol) break;
    Mat hess(d, d);
    for (int j = 0; j < d; ++j) {
      xp = x;
      xm = x;
      xp[j] += h;
      xm[j] -= h;
      oracle.gradient(xp, gp);
      oracle.gradient(xm, gm);
      hess.col(j) = (gp - gm) / (2.0 * h);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    Eigen::LDLT<Mat> ldlt(hess);
    Vec s = ldlt.info() == Eigen::Success ? ldlt.solve(g).eval() : (g / hess.norm()).eval();
    if (!s.allFinite()) break;
    x -= s;
  }
  fx = oracle.value(x);
  oracle.gradient(x, g);
  return {x, fx, g.norm(), iter, g.norm() < grad_tol};
}

Vec muller_brown_middle_well() {
  static Vec center = [] {
    FunctionOracle vm(
        2, "muller_brown",
        [](const Vec& q) { return MullerBrownTerms::value(q[0], q[1]); },
        [](const Vec& q, Vec& g) { MullerBrownTerms::gradient(q[0], q[1], g[0], g[1]); });
    Vec start(2);
    start << 0.0, 0.5;
    MinimizeResult res = minimize_gradient_descent(vm, start, 1e-8);
    if (!res.converged) throw std::runtime_error("Muller-Brown middle-well search did not converge");
    return res.x;
  }();
  return center;
}

}  // namespace effpot
