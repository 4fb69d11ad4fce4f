#pragma once

#include <stdexcept>
#include <string>

namespace smre {

/// Shape or axis disagreement between tensors.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

/// A caller violated a documented precondition.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

/// Input is structurally valid but numerically degenerate (zero norm, all-PAD caption, ...).
class DegenerateInputError : public std::runtime_error {
public:
    explicit DegenerateInputError(const std::string& msg)
        : std::runtime_error("degenerate input: " + msg) {}
};

/// An operation was invoked in a phase that forbids it (e.g. support branch at inference).
class ModeError : public std::runtime_error {
public:
    explicit ModeError(const std::string& msg) : std::runtime_error("mode error: " + msg) {}
};

/// A numeric evaluation produced NaN/Inf or otherwise failed mid-computation.
class EvaluationError : public std::runtime_error {
public:
    explicit EvaluationError(const std::string& msg) : std::runtime_error("evaluation error: " + msg) {}
};

/// File parsing / serialization failure.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace smre
