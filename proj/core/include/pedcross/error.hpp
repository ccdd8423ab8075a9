#pragma once

#include <stdexcept>
#include <string>

namespace pedcross {

// Error taxonomy mirrored by the CLI exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad or unknown configuration (exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

// Missing, malformed, or degenerate data (exit code 3).
struct DataError : Error {
    using Error::Error;
};

// Tensor shape mismatch; always names the offending shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite value produced, or an undefined distribution (exit code 4).
struct NumericError : Error {
    using Error::Error;
};

// Checkpoint version/manifest/compatibility problems.
struct CheckpointError : Error {
    using Error::Error;
};

}  // namespace pedcross
