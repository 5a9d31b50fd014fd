#pragma once

#include <stdexcept>
#include <string>

namespace puzzleseq {

// Error categories map to CLI exit codes: config/validation -> 2,
// data/input -> 3, numeric failure -> 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace puzzleseq
