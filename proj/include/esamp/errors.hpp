#pragma once

#include <stdexcept>
#include <string>

namespace esamp {

// Error taxonomy used across the library. Every throwing operation documents
// which of these it raises; callers that want to degrade gracefully (e.g. the
// decode engine skipping a training step) catch the specific type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// shape mismatch between operands
struct DimensionError : Error {
    using Error::Error;
};

// NaN/Inf where finite values are required, or a solver failed to converge
struct NumericError : Error {
    using Error::Error;
};

// API misuse: stale cache, empty candidate set, asymmetric kernel, ...
struct ContractError : Error {
    using Error::Error;
};

// invalid configuration value (beta non-finite, temperature <= 0, bad filter)
struct ConfigError : Error {
    using Error::Error;
};

// fixed-capacity resource exhausted (context window, ring buffer)
struct CapacityError : Error {
    using Error::Error;
};

// malformed external input (checkpoint file, trace file, config file)
struct InputError : Error {
    using Error::Error;
};

} // namespace esamp
