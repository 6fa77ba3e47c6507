#ifndef DDCM_ERRORS_HPP
#define DDCM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ddcm {

/// Error categories map 1:1 to CLI exit codes (config=2, io=3, numeric=4).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Shape/contract violations inside the numeric engine.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values, NaN loss, degenerate normalizations.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ddcm

#endif  // DDCM_ERRORS_HPP
