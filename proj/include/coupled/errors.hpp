#pragma once

#include <stdexcept>
#include <string>

namespace coupled {

/// Invalid or inconsistent configuration input (model, scenario, config files).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Algebraic system F x_a = b cannot be solved reliably.
class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  double condition_;
};

/// An iterative method ran out of iterations.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace coupled
