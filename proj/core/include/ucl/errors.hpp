#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ucl {

// Base of every error thrown by the library. kind() is a short stable tag
// ("config", "domain", "shape", ...) used by the CLI for machine-readable
// one-line diagnostics.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

// Non-positive standard deviation or similar out-of-domain numeric input.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error("domain", what) {}
};

// Contract violation: mismatched shapes, unknown head, missing cache.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

// Malformed checkpoint, report or other structured file.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format", what) {}
    FormatError(std::string kind, const std::string& what) : Error(std::move(kind), what) {}
};

} // namespace ucl
