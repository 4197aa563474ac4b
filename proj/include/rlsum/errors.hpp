#pragma once

#include <stdexcept>
#include <string>

namespace rlsum {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or size mismatch between numeric objects.
struct DimensionError : Error {
    using Error::Error;
};

// An operation received an empty sequence / empty index set.
struct EmptyInputError : Error {
    using Error::Error;
};

// Data fails a documented invariant (manifest checks, bad index sets, ...).
struct ValidationError : Error {
    using Error::Error;
};

// An object was used in a state that forbids the call (step after done,
// training a frozen model, attention outside the retained set, ...).
struct StateError : Error {
    using Error::Error;
};

// Bad run configuration detected before any work starts.
struct ConfigError : Error {
    using Error::Error;
};

// File could not be read, written or parsed.
struct IoError : Error {
    using Error::Error;
};

}  // namespace rlsum
