// Shared aliases and error types for the latticegp library.
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace lgp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

using Rng = std::mt19937_64;

// A caller broke a documented precondition (bad sizes, stale caches, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Arithmetic failed: non-finite values, factorization breakdown, CG blow-up.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A configured resource limit was exceeded (dense eig size, exact-GP cap).
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A point left the interpolable interior of the inducing grid.
struct GridRangeError : ContractError {
  int axis;
  GridRangeError(int axis_, const std::string& msg)
      : ContractError(msg), axis(axis_) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline bool all_finite(const Mat& a) { return a.allFinite(); }

}  // namespace lgp
