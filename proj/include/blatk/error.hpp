#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace blatk {

enum class ErrorKind { config, numeric };

/// Base of every exception thrown by the toolkit. The kind decides the CLI exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Invalid parameters, violated preconditions, malformed files.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Divergence, rank deficiency and other failures that depend on the data.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what, std::size_t index = 0)
        : Error(ErrorKind::numeric, what), index_(index) {}
    [[nodiscard]] std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

} // namespace blatk
