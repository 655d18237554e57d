#pragma once

#include <stdexcept>
#include <string>

namespace kgprop {

// Malformed input file; the message carries the path and line number.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unknown label under a fixed vocabulary, or a vocabulary file whose ids
// are not dense.
struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch on an API boundary.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Rank-deficient matrix that stayed degenerate after the perturb-and-retry
// fallback of the orthogonalization.
struct DegenerateMatrixError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or inconsistent data (candidate rows, checkpoint payloads,
// digest mismatches).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value, rejected before any compute starts.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace kgprop
