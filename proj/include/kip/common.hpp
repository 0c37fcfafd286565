#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace kip {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// One generator type everywhere so seeded runs are reproducible bit-for-bit.
using Rng = std::mt19937_64;

// Invalid arguments / violated preconditions (CLI exit code 2).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated input files (CLI exit code 3).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Failed factorizations, non-finite values (CLI exit code 4).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ArgumentError(msg);
}

}  // namespace kip
