#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace tgpssm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Added to kernel gram diagonals before a Cholesky factorization.
inline constexpr double kJitter = 1e-6;

// Numeric failure during evaluation (NaN/Inf, failed decomposition, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CholeskyError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Input outside a flow layer's domain (e.g. Log of a non-positive value).
class FlowDomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Numeric inversion of a flow failed to converge.
class FlowInversionError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Malformed configuration, file, or CLI input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace tgpssm
