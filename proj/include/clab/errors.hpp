#pragma once
#include <stdexcept>
#include <string>

namespace clab {

// Error taxonomy shared by the whole library. The CLI maps these onto
// exit codes: ConfigError/ShapeError/UsageError -> 1, FormatError/
// IntegrityError -> 3, everything else (including DivergenceError) -> 2.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration values (bad widths, bad schedule bounds, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Dimension mismatches detected before any arithmetic runs.
struct ShapeError : Error {
    using Error::Error;
};

// API contract violations (stale caches, unlabeled data where labels
// are required, timestep out of range, ...).
struct UsageError : Error {
    using Error::Error;
};

// Malformed on-disk files (IDX, GLD1, CLNN).
struct FormatError : Error {
    using Error::Error;
};

// Manifest/hash inconsistencies found while resuming a run.
struct IntegrityError : Error {
    using Error::Error;
};

// Non-finite values encountered during training or sampling.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace clab
