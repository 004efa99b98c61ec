#pragma once

#include <stdexcept>
#include <string>

namespace dauhst {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not satisfy an operation's shape rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its admissible domain (non-positive alpha, odd channel count, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Explicit-matrix verification path would exceed the configured entry cap.
class CapExceeded : public Error {
 public:
  using Error::Error;
};

}  // namespace dauhst
