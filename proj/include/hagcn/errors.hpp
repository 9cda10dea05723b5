#pragma once

#include <stdexcept>
#include <string>

namespace hagcn {

// Base class for everything the library throws on bad input or state.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed documents, manifests, configs, or arguments.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Unreadable or incompatible model checkpoint.
class CheckpointError : public Error {
public:
    using Error::Error;
};

// Two models (or a model and a manifest) disagree on the class list.
class ClassMismatchError : public Error {
public:
    using Error::Error;
};

// An operation produced NaN/Inf, or training diverged.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Tensor shapes incompatible with an operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Process exit codes shared by the CLI.
enum class ExitCode : int {
    ok = 0,
    usage = 1,
    validation = 2,
    checkpoint = 3,
    class_mismatch = 4,
    divergence = 5,
};

}  // namespace hagcn
