#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace dfmtl {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Scalar type used by the training pipeline.
using Real = double;
using VecR = Vec<Real>;
using MatR = Mat<Real>;

/// Broken precondition on a library call (shape mismatch, bad index, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid user configuration (unknown regime, missing held-out method, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (manifest rows, frame files, archives).
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace dfmtl
