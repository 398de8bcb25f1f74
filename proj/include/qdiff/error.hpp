#ifndef QDIFF_ERROR_HPP
#define QDIFF_ERROR_HPP

#include <stdexcept>
#include <string>

namespace qdiff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A parameter lies outside the mathematical domain of a formula.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

/// Malformed input: bad files, bad configuration, violated preconditions.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

/// A numerical procedure failed (non-convergence, instability, ...).
class ComputationError : public Error {
public:
    explicit ComputationError(const std::string& msg) : Error(msg) {}
};

}  // namespace qdiff

#endif
