#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace effpot {

// Invalid or out-of-range configuration (bad knob, non-PD mass, unknown kind ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A trajectory left the finite regime; carries the last finite state and the
// step index at which the blow-up was detected.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, long long step, Eigen::VectorXd last_q,
                  Eigen::VectorXd last_p)
      : std::runtime_error(msg), step(step), last_q(std::move(last_q)), last_p(std::move(last_p)) {}
  long long step;
  Eigen::VectorXd last_q;
  Eigen::VectorXd last_p;
};

class InsufficientDataError : public std::runtime_error {
 public:
  explicit InsufficientDataError(const std::string& msg) : std::runtime_error(msg) {}
};

class DegenerateDataError : public std::runtime_error {
 public:
  explicit DegenerateDataError(const std::string& msg) : std::runtime_error(msg) {}
};

class IllPosedFitError : public std::runtime_error {
 public:
  explicit IllPosedFitError(const std::string& msg) : std::runtime_error(msg) {}
};

class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an interface contract (ragged ensembles, mismatched grids ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// The momentum normality gate rejected the equilibrium data.
class NormalityGateError : public std::runtime_error {
 public:
  explicit NormalityGateError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace effpot
