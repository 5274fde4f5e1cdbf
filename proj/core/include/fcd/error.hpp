#pragma once

#include <stdexcept>
#include <string>

namespace fcd {

/// Base class for every failure raised by the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or unreadable user input (files, annotations, parameters).
/// The command-line front end maps this to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Numerically degenerate data, e.g. a constant-intensity brain.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace fcd
