#pragma once

#include <stdexcept>
#include <string>

namespace goodat {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/matrix shape disagreement; message names the offending shapes.
struct DimensionError : Error {
    using Error::Error;
};

// A caller broke a documented precondition.
struct ContractError : Error {
    using Error::Error;
};

// Malformed input file; message carries file name and line number when known.
struct ParseError : Error {
    using Error::Error;
};

// Checkpoint failed a load-time consistency check.
struct LoadError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace goodat
