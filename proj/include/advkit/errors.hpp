#pragma once

#include <stdexcept>
#include <string>

namespace advkit {

// Bad shapes, invalid options, out-of-range labels and the like.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf intermediates, diverging training loss.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed files (checkpoints, IDX data, CSV).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace advkit
