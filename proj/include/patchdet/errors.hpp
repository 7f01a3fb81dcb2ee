#pragma once

#include <stdexcept>
#include <string>

namespace patchdet {

// Error taxonomy. The CLI maps these onto exit codes:
// usage errors -> 1, data/config errors -> 2, numerical aborts -> 3.

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct LayoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace patchdet
