#ifndef COALMTL_ERRORS_HPP
#define COALMTL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace coalmtl {

// Error classes map onto the CLI exit codes: config -> 1, data -> 2,
// numerical -> 3.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent tree structure (non-positive durations, etc.).
struct InvalidTreeError : DataError {
  explicit InvalidTreeError(const std::string& what) : DataError(what) {}
};

// Optimizer failed to reach its gradient tolerance within the iteration cap.
struct ConvergenceError : NumericalError {
  explicit ConvergenceError(const std::string& what) : NumericalError(what) {}
};

}  // namespace coalmtl

#endif
