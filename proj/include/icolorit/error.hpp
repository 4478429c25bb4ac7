#pragma once

#include <stdexcept>
#include <string>

namespace icolorit {

/// Raised when a caller violates an operation's preconditions (bad shape,
/// out-of-bounds hint, malformed request).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for failures outside the caller's control: I/O, decoding,
/// numerical divergence.
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public RuntimeError {
public:
    using RuntimeError::RuntimeError;
};

/// Training loss became non-finite.
class DivergenceError : public RuntimeError {
public:
    using RuntimeError::RuntimeError;
};

}  // namespace icolorit
