#pragma once

#include <stdexcept>
#include <string>

namespace vcor {

// Base of every error raised by the library. The CLI maps the subclasses onto
// exit codes: InputError/ShapeError/ConfigError/IoError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace vcor
