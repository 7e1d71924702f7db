#pragma once

#include <stdexcept>
#include <string>

namespace xtkd {

// Root of every exception the library throws. Each subclass names one failure
// category so callers (and the CLI's exit-code mapping) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite input, non-positive argument to a log, and similar.
class DomainError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class MissingInputError : public Error {
 public:
  using Error::Error;
};

// Attempt to update the parameters of a frozen network.
class FrozenError : public Error {
 public:
  using Error::Error;
};

// Singular-value gap too small to split the spectrum into kept/tail parts.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace xtkd
