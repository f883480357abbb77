#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dualcan {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid argument value (out-of-range probability, bad dims, empty batch...).
class ParameterError : public Error {
public:
    using Error::Error;
};

// Operation not valid for the object's current state.
class StateError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Non-finite value in losses, gradients or parameters.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class VersionError : public Error {
public:
    VersionError(std::uint32_t found, std::uint32_t expected)
        : Error("unsupported format version " + std::to_string(found) + " (expected " +
                std::to_string(expected) + ")"),
          found_(found) {}
    std::uint32_t found() const noexcept { return found_; }

private:
    std::uint32_t found_;
};

}  // namespace dualcan
