#pragma once

#include <stdexcept>
#include <string>

namespace adham {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad files, shape mismatches, contract violations on data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or divergence during evaluation or training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid arguments or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace adham
