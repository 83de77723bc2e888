#pragma once

#include <stdexcept>
#include <string>

namespace clir {

/// Bad command-line usage or configuration. Maps to exit code 1.
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data. Maps to exit code 2.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values, divergence, failed numerical preconditions. Maps to exit code 3.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace clir
