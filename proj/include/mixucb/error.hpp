#pragma once

#include <stdexcept>
#include <string>

namespace mixucb {

// Invalid input, configuration, or precondition violation detected before work starts.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Failure while running (exhausted pools, I/O, solver cross-check mismatch).
class RuntimeError : public std::runtime_error {
public:
    explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mixucb
