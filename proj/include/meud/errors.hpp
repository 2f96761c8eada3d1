#pragma once

#include <stdexcept>
#include <string>

namespace meud {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or size disagreement between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Malformed input bytes (IDX, CIFAR-10, checkpoint).
struct ParseError : Error {
    enum class Kind {
        BadMagic,
        Truncated,
        CountMismatch,
        BadRecordSize,
        BadLabel,
        BadVersion,
    };

    ParseError(Kind k, const std::string& msg) : Error(msg), kind(k) {}

    Kind kind;
};

// Invalid configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// NaN/Inf met where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace meud
