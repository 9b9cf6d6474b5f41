#pragma once

#include <stdexcept>
#include <string>

namespace softscore {

// Malformed input: definitions, cohorts, configs, or arguments violating a
// documented precondition that depends on data rather than on the caller.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite objective or a numerical procedure that failed to converge.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace softscore
