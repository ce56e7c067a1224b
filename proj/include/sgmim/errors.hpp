#pragma once

#include <stdexcept>
#include <string>

namespace sgmim {

// Shape or grid disagreement between inputs.
struct GeometryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid or degenerate configuration (mask counts, loss weights, seed ranges, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf encountered in a value that must stay finite.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint manifest/blob inconsistencies and truncated files.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument outside a function's mathematical domain (e.g. non-positive depth).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

}  // namespace sgmim
