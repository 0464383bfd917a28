#pragma once

#include <stdexcept>
#include <string>

namespace refbridge {

// Shape/geometry violations: mismatched extents, indivisible dimensions.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed files: bad magic, truncated payload, version mismatch.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration (CLI flags, config files, presets).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite state mid-computation (sampler divergence, degenerate metric).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace refbridge
