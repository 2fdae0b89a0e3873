#pragma once

#include <stdexcept>
#include <string>

namespace divlab {

// Error taxonomy mirrors the CLI exit-code contract:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input-data validation failures (row-indexed where possible).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures: degenerate systems, failed brackets, singular fits.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace divlab
