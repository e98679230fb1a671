#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evomail {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Errors that point into an input byte stream.
class OffsetError : public Error {
public:
    OffsetError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class MalformedMessage : public OffsetError {
public:
    using OffsetError::OffsetError;
};

class UnsupportedEncoding : public OffsetError {
public:
    using OffsetError::OffsetError;
};

class CorruptFile : public OffsetError {
public:
    using OffsetError::OffsetError;
};

class VersionMismatch : public Error {
public:
    using Error::Error;
};

class EmptyCorpus : public Error {
public:
    using Error::Error;
};

class EmptyInput : public Error {
public:
    using Error::Error;
};

class CandidateExplosion : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class NonFiniteGradient : public Error {
public:
    NonFiniteGradient(const std::string& parameter)
        : Error("non-finite gradient in " + parameter), parameter_(parameter) {}
    const std::string& parameter() const noexcept { return parameter_; }

private:
    std::string parameter_;
};

class NonFiniteLoss : public Error {
public:
    using Error::Error;
};

class DivergenceDetected : public Error {
public:
    using Error::Error;
};

class RemoteUnavailable : public Error {
public:
    using Error::Error;
};

class SeedMismatch : public Error {
public:
    using Error::Error;
};

class TraceUnavailable : public Error {
public:
    using Error::Error;
};

class InsufficientCheckpoints : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace evomail
