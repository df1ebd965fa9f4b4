#pragma once

#include <stdexcept>
#include <string>

namespace normlab {

// Base for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes (names both shapes in the message).
struct ShapeError : Error {
    using Error::Error;
};

// Invalid argument value (negative std, stride < 1, ...).
struct ParamError : Error {
    using Error::Error;
};

// Bad data: labels out of range, degenerate reductions, empty batches.
struct DataError : Error {
    using Error::Error;
};

// Malformed file contents (IDX / CIFAR binary parsing).
struct FormatError : Error {
    using Error::Error;
};

// API misuse: e.g. backward on a non-scalar, regularizer on a non-RegNorm model.
struct UsageError : Error {
    using Error::Error;
};

// Numeric failure: zero norms, non-finite gradients.
struct NumericError : Error {
    using Error::Error;
};

// Experiment/model configuration rejected during validation.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace normlab
