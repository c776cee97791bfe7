#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace effpot {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// First-order oracle of a potential: value and analytic gradient. Oracles are
// immutable after construction and safe to evaluate from many threads.
class PotentialOracle {
 public:
  virtual ~PotentialOracle() = default;
  virtual int dim() const = 0;
  virtual double value(const Vec& q) const = 0;
  virtual void gradient(const Vec& q, Vec& grad) const = 0;
  virtual std::string name() const { return "potential"; }

  Vec gradient(const Vec& q) const {
    Vec g(dim());
    gradient(q, g);
    return g;
  }
};

using OraclePtr = std::shared_ptr<const PotentialOracle>;

enum class BuiltinKind { Quad3Scale, DoubleWell3Scale, CosSum, Quad2D, MullerBrown2D };

BuiltinKind builtin_kind_from_string(const std::string& s);
std::string to_string(BuiltinKind kind);

// Built-in selection plus named scalar parameters (eps1, eps2, eps, n_terms).
// Missing parameters fall back to the documented defaults of each kind.
struct BuiltinSpec {
  BuiltinKind kind;
  std::map<std::string, double> params;

  double param_or(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

// A built-in exposes the full potential plus its scale components (macro term
// first). Components are reference material for tests and validation; the
// learning pipeline itself only ever sees the full oracle.
struct BuiltinPotential {
  OraclePtr full;
  std::vector<OraclePtr> components;
  std::vector<std::string> component_names;

  OraclePtr component(const std::string& name) const;
};

BuiltinPotential make_builtin(const BuiltinSpec& spec);

struct GradientCheckReport {
  double max_rel_err = 0.0;
  Vec worst_point;
  double fd_step = 0.0;
};

// Compares the analytic gradient against central differences at each probe
// point. The error is scaled by max(1, |grad|_inf) so near-critical points do
// not blow up the ratio. fd_step must be adapted to the stiffest scale of the
// oracle (h ~ (eps_machine * scale^2)^(1/3) for a component of scale `scale`).
GradientCheckReport gradient_check(const PotentialOracle& oracle, const std::vector<Vec>& points,
                                   double fd_step = 1e-6);

struct MinimizeResult {
  Vec x;
  double value;
  double grad_norm;
  int iterations;
  bool converged;
};

// Gradient descent with Armijo backtracking; fine-step local minimizer used
// for locating well centers.
MinimizeResult minimize_gradient_descent(const PotentialOracle& oracle, const Vec& start,
                                         double grad_tol = 1e-8, int max_iter = 200000);

// Center of the middle well of the (unscaled) Muller-Brown surface, found by
// local minimization from (0, 0.5). Cached after the first call.
Vec muller_brown_middle_well();

}  // namespace effpot
