#pragma once

#include <stdexcept>
#include <string>

namespace g2l {

// Shape mismatches in tensor primitives and model wiring.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration values (dims, ratios, counts).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated operation precondition (empty caption, non-scalar loss, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite numbers where finite values are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or truncated files.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Token ids outside the vocabulary.
struct VocabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace g2l
