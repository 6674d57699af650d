#pragma once

#include <stdexcept>
#include <string>

namespace sadm {

// Shapes of operands do not agree.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A precondition of an operation was violated by the caller.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// A distribution has no selectable entry (every position masked).
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SizeLimitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Decoding exceeded its step budget; indicates a masking bug.
struct RunawayError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint does not match the model it is loaded into.
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sadm
