#pragma once

#include <stdexcept>
#include <string>

namespace fwerk {

// Thrown when a file cannot be opened, read or written.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when inputs violate a documented precondition (bad token, dimension
// mismatch, rank deficiency, out-of-range parameter, ...).
class validation_error : public std::runtime_error {
 public:
  explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a computation cannot be completed to the promised accuracy
// (non-convergent fit, indefinite correlation window, broken monotonicity).
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fwerk
