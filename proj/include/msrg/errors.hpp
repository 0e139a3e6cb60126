#pragma once

#include <stdexcept>
#include <string>

namespace msrg {

// Shape/dimension violations (mismatched operands, bad sizes).
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// NaN/Inf escaping an operation, or a training run diverging.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Inputs that are structurally valid but degenerate for the requested
// operation (zero-norm rows under cosine, rank-deficient PCA input).
class DegenerateInputError : public std::runtime_error {
public:
    explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// ParameterMaps that cannot be merged (name sets or shapes differ).
class IncompatibleError : public std::runtime_error {
public:
    explicit IncompatibleError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint file problems, one kind per failure mode.
class CheckpointError : public std::runtime_error {
public:
    enum class Kind {
        io,
        bad_magic,
        version_mismatch,
        bad_header,
        offset_overlap,
        truncated,
    };

    CheckpointError(Kind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Bad CLI flags or config file contents.
class UsageError : public std::invalid_argument {
public:
    explicit UsageError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace msrg
