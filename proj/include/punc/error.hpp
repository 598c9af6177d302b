#pragma once

#include <stdexcept>
#include <string>

namespace punc {

// Base of every error raised by the library. The CLI maps subclasses to
// exit codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; the message names the offending operand.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward pass, a gradient or a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, reused tape, bad configuration.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A scalar argument outside its domain (λ progress, lr step, token id, length).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Malformed or empty input data (corpus files, labels, text).
class DataError : public Error {
 public:
  using Error::Error;
};

// Checkpoint/parameter transfer failures.
class TransferError : public Error {
 public:
  using Error::Error;
};

}  // namespace punc
