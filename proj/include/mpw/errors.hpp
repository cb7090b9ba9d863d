#pragma once

#include <stdexcept>
#include <string>

namespace mpw {

// Base class for all library errors. Subclasses indicate which contract was
// violated so callers (and the CLI) can map them to exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values: nonpositive principal, zero discount rate, ...
class InvalidInputError : public Error {
public:
    explicit InvalidInputError(const std::string& msg) : Error(msg) {}
};

// Design matrix not full rank; message names the offending columns.
class RankError : public Error {
public:
    explicit RankError(const std::string& msg) : Error(msg) {}
};

// Too few rows/groups to estimate anything.
class InsufficientDataError : public Error {
public:
    explicit InsufficientDataError(const std::string& msg) : Error(msg) {}
};

// Iterative routine hit its iteration cap; message carries the last change.
class ConvergenceError : public Error {
public:
    explicit ConvergenceError(const std::string& msg) : Error(msg) {}
};

// Malformed input file; message names file, line, and column.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

}  // namespace mpw
