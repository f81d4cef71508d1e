#pragma once

#include <stdexcept>
#include <string>

namespace cpvit {

/// Root of every exception thrown by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A model, mask or run configuration violates its invariants.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A scalar parameter is out of its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// An encoder archive is missing an entry or carries a wrongly shaped one.
class ModelError : public ConfigError {
public:
    ModelError(std::string entry, const std::string& what)
        : ConfigError(what), entry_(std::move(entry)) {}

    const std::string& entry() const noexcept { return entry_; }

private:
    std::string entry_;
};

enum class ArchiveErrorKind {
    io,
    bad_magic,
    unsupported_version,
    truncated,
    duplicate_name,
    malformed,
};

const char* to_string(ArchiveErrorKind kind) noexcept;

/// Failure while reading or writing a tensor archive.
class ArchiveError : public Error {
public:
    ArchiveError(ArchiveErrorKind kind, const std::string& what)
        : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ArchiveErrorKind kind() const noexcept { return kind_; }

private:
    ArchiveErrorKind kind_;
};

}  // namespace cpvit
