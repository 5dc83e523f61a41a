#pragma once

#include <stdexcept>
#include <string>

namespace mvcl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape / rank mismatches between tensor operands.
struct DimensionError : Error {
    using Error::Error;
};

// Non-finite values or degenerate (near-zero norm) vectors.
struct NumericError : Error {
    using Error::Error;
};

// Bad labels, out-of-vocab tokens, inconsistent prototype sets.
struct ValueError : Error {
    using Error::Error;
};

// Malformed or truncated dataset / checkpoint files.
struct FormatError : Error {
    using Error::Error;
};

// Invalid run configuration.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace mvcl
