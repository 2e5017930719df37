#pragma once

#include <stdexcept>
#include <string>

namespace handdiff {

// Error taxonomy mirrors the CLI exit codes: config 2, I/O 3, numerical 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace handdiff
