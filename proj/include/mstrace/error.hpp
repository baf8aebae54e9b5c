#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mstrace {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent inputs: panels, configs, designs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failures: non-convergent MLE, singular information, zero likelihood.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Formats an (individual, time) location for error messages.
inline std::string at_cell(std::string_view id, long t) {
  return " (individual '" + std::string(id) + "', t=" + std::to_string(t) + ")";
}

}  // namespace mstrace
