#pragma once

#include <stdexcept>
#include <string>

namespace dlb {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class NonSymmetric : public Error {
public:
    using Error::Error;
};

/// Jitter escalation hit its cap without producing a usable factorization.
class SingularSystem : public Error {
public:
    using Error::Error;
};

class ZeroVector : public Error {
public:
    using Error::Error;
};

/// A forward pass produced inf/nan. The trainer turns this into a `diverged` stop.
class NonFinite : public Error {
public:
    using Error::Error;
};

class AllDiverged : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Configuration problem. `field()` is the dotted path of the offending key.
class ParseError : public Error {
public:
    ParseError(std::string path, std::string field, const std::string& reason)
        : Error(path + ": " + field + ": " + reason), path_(std::move(path)), field_(std::move(field)) {}

    const std::string& path() const noexcept { return path_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::string path_;
    std::string field_;
};

}  // namespace dlb
