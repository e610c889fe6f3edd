#pragma once

#include <stdexcept>
#include <string>

namespace dav {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad flags or config values. CLI exit code 1.
struct UsageError : Error {
  using Error::Error;
};

// Malformed files, shape mismatches, empty masks. CLI exit code 2.
struct DataError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required. CLI exit code 3.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace dav
