#pragma once

#include <stdexcept>
#include <string>

namespace laneatt {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimension / shape mismatch between tensors or between a tensor and an op contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value; carries the offending field path for diagnostics.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// Malformed input data (label files, checkpoints, images). line() is 1-based,
/// or -1 when no line position applies.
class DataError : public Error {
public:
    explicit DataError(const std::string& message, long line = -1)
        : Error(line >= 0 ? "line " + std::to_string(line) + ": " + message : message),
          line_(line) {}

    long line() const { return line_; }

private:
    long line_ = -1;
};

/// Misuse of the gradient tape (output not recorded, stale handles, ...).
class TapeError : public Error {
public:
    using Error::Error;
};

}  // namespace laneatt
