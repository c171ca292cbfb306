#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aci {

/// Base of every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration fields (probabilities out of range, negative step sizes, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An operation was asked for a value that needs data it does not have.
class NoDataError : public Error {
public:
    using Error::Error;
};

/// An argument is outside the mathematical domain of the operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Floating-point breakdown (variance underflow, non-finite objective).
class NumericalError : public Error {
public:
    using Error::Error;
};

class DegenerateDataError : public Error {
public:
    using Error::Error;
};

class RootFindingError : public Error {
public:
    using Error::Error;
};

class ErgodicityError : public Error {
public:
    using Error::Error;
};

class UnsupportedChainError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. `line()` is 1-based; 0 when the failure is not tied to a line.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Well-formed input whose values violate a documented constraint.
class ValidationError : public Error {
public:
    ValidationError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace aci
