#pragma once

#include <stdexcept>
#include <string>

namespace mpose {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rejected input: shapes or extents that violate an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values produced where the contract requires finite results.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Checkpoint cannot be used: bad magic, wrong version, truncation,
// or a config that does not match what the caller asked for.
struct CheckpointError : Error {
    using Error::Error;
};

struct EstimationFailed : Error {
    using Error::Error;
};

// Training loss became non-finite.
struct DivergenceError : Error {
    using Error::Error;
};

// Dataset layout problems: missing frames, malformed annotations.
struct DataError : Error {
    using Error::Error;
};

// Prediction/ground-truth sample ids do not line up.
struct EvalMismatchError : Error {
    using Error::Error;
};

// One-shot vs patchwise outputs disagreed beyond tolerance.
struct EquivalenceError : Error {
    using Error::Error;
};

} // namespace mpose
