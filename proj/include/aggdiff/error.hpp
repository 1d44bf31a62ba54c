#pragma once

#include <stdexcept>
#include <string>

namespace aggdiff {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the domain of a function (s <= 0, p < 1, table range...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation's precondition (wrong dimension, grid mismatch...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Time step exceeds the positivity bound of the explicit part of the scheme.
class CflError : public Error {
 public:
  using Error::Error;
};

// Implicit diffusion produced a value below the clip threshold.
class NegativityError : public Error {
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

}  // namespace aggdiff
