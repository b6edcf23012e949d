#pragma once

#include <stdexcept>
#include <string>

namespace stclab {

/// Invalid input, unsatisfied precondition, or unsupported configuration.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Array dimensions do not match between cooperating objects.
class ShapeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Request exceeds a hard memory/size guard.
class ResourceLimitError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values or an irrecoverable loss of numerical meaning.
class NumericalBreakdown : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace stclab
