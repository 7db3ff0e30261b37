#pragma once

#include <stdexcept>
#include <string>

namespace ssd {

// Contract violation on tensor extents (mismatched or malformed shapes).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad user-supplied values: out-of-range token ids, non-finite parameters,
// malformed configuration.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace ssd
