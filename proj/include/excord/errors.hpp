#pragma once

#include <stdexcept>
#include <string>

namespace excord {

// Base for every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file (JSON syntax, wrong shape).
class ParseError : public Error {
public:
    using Error::Error;
};

// Input parsed but violates a data invariant (span mismatch, duplicate keys, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

// Internal contract broken between components (shape or geometry mismatch).
class ContractError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class CapabilityError : public Error {
public:
    using Error::Error;
};

class DecodeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Carries the serialized backend input that failed.
class RewriteError : public Error {
public:
    RewriteError(const std::string& message, std::string input)
        : Error(message), input_(std::move(input)) {}
    const std::string& input() const noexcept { return input_; }

private:
    std::string input_;
};

}  // namespace excord
