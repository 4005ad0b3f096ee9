#pragma once

#include <stdexcept>
#include <string>

namespace neuralbeta {

// Base of every error raised by the library. Callers that only need to
// distinguish "ours" from everything else catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

// Raised by Cholesky-based solves when the system is not positive definite
// (or its reciprocal condition number falls below tolerance).
class SingularSystemError : public Error {
public:
    using Error::Error;
};

// Violated precondition of an operation (empty input, negative weight, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class BoundsError : public Error {
public:
    using Error::Error;
};

class InsufficientHistoryError : public Error {
public:
    using Error::Error;
};

// Malformed input data (CSV schema violations, dimension mismatches).
class DataError : public Error {
public:
    using Error::Error;
};

class UnsupportedError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace neuralbeta
