#pragma once

#include <stdexcept>
#include <string>

namespace qnet {

// Raised when inputs violate a documented precondition (bad shapes, flags,
// malformed containers). CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised on filesystem/stream failures. CLI maps this to exit code 2.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace qnet
