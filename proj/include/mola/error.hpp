#pragma once

#include <stdexcept>
#include <string>

namespace mola {

// Caller-side problems: bad shapes, bad configuration, unreadable data.
// The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

// Broken internal contracts (non-convergence, violated invariants).
// The CLI maps these to exit code 2.
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConvergenceError : public InternalError {
public:
    using InternalError::InternalError;
};

}  // namespace mola
