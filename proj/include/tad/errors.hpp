#pragma once

#include <stdexcept>
#include <string>

namespace tad {

// Shape/dimension mismatches between arrays.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Domain violations (log of non-positive value, out-of-range gather, ...).
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration: unknown keys, out-of-bounds fields, incompatible checkpoints.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures at runtime (NaN loss, failed gradient check).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tad
