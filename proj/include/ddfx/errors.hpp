#pragma once

#include <stdexcept>
#include <string>

namespace ddfx {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated precondition: shape mismatch, bad argument, wrong tape.
struct ContractError : Error {
    using Error::Error;
};

// NaN/Inf produced by an operation.
struct NumericError : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

// Gradient tape exceeded its memory budget.
struct ResourceError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace ddfx
