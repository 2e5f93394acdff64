#pragma once

#include <stdexcept>
#include <string>

namespace umg {

// Error taxonomy shared by the whole library. The C API maps each class to a
// status code, so new classes need a corresponding entry there.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes for an op.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Non-finite values, undefined normalization, diverged step.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Caller violated a documented precondition.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Object used in an invalid lifecycle state (e.g. consumed tape).
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(msg) {}
};

// Malformed file content (checkpoint, corpus, config).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

} // namespace umg
