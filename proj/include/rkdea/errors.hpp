#pragma once

#include <stdexcept>
#include <string>

namespace rkdea {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension or index incompatibility between tensors.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed input file; message carries the offending line number.
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid input that violates a dataset invariant.
struct IntegrityError : Error {
    using Error::Error;
};

// Argument outside its documented domain.
struct InputError : Error {
    using Error::Error;
};

// Non-finite value or numerically unusable state.
struct NumericError : Error {
    using Error::Error;
};

// Embeddings collapsed to the point where distance normalization is meaningless.
struct DegenerateEmbeddingError : NumericError {
    using NumericError::NumericError;
};

// Inconsistent run configuration (flag combinations, checkpoint/dataset mismatch).
struct ConfigError : Error {
    using Error::Error;
};

// Checkpoint file rejected at load time. Each corruption class gets its own kind.
struct CheckpointError : Error {
    enum class Kind { Magic, Version, Header, Truncated, Shape };

    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}

    Kind kind;
};

}  // namespace rkdea
