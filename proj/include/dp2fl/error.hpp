#pragma once

#include <stdexcept>
#include <string>

namespace dp2fl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension or length disagreement between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside an operation's domain (negative loss, bad label, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-order protocol message.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace dp2fl
