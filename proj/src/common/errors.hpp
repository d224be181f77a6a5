#pragma once

#include <stdexcept>
#include <string>

namespace fds {

// Error taxonomy shared by every module. The C API maps each class onto a
// status code and the CLI maps status codes onto process exit codes.

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace fds
