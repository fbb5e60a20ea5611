#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gibbsdiag {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arguments violate an operation's preconditions (dimensions, ranges, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An iterative routine did not converge or a numerical check failed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace gibbsdiag
