#pragma once

#include <stdexcept>
#include <string>

namespace etl {

/// Malformed configuration or violated precondition on user-supplied input.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical procedure could not produce a trustworthy result.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Regressor Gram matrix is singular or too ill-conditioned to invert.
class InsufficientExcitation : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Wire decoding failure (truncated buffer, unknown tag, trailing bytes).
class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Internal protocol invariant broken, e.g. sender/receiver predictions diverged.
class ProtocolError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace etl
