#pragma once

#include <stdexcept>
#include <string>

namespace refl {

// Thrown for bad run configuration or checkpoint/config mismatch. CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for file read/write failures. CLI exit code 3.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for shape mismatches, out-of-range labels, non-finite values. CLI exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace refl
