#pragma once

#include <stdexcept>
#include <string>

namespace fwn {

// Caller violated an operation's precondition (shape mismatch, bad argument).
struct ContractError : std::invalid_argument {
    explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

// A file does not conform to its declared format.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Underlying I/O failed (missing file, short read, unwritable path).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// A numerical procedure could not produce a usable result (singular system, NaN loss).
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Synthetic data generation produced an invalid scene (sprite left the canvas).
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fwn
