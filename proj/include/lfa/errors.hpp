#pragma once

#include <stdexcept>
#include <string>

namespace lfa {

// Malformed or contract-violating input data. Carries enough context
// (file, line, field) in the message to locate the offending record.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem / stream failures and corrupt binary payloads.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lfa
