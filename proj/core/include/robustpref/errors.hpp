#pragma once

#include <stdexcept>
#include <string>

namespace robustpref {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, malformed files, out-of-range arguments. CLI exit 1.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

class IndexError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

// a == a' where a strict pair is required.
class DegeneratePairError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

// Noise rate outside its admissible range.
class InvalidRateError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

// Sampling policy too concentrated to produce distinct candidates.
class DegenerateSftError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

class MalformedRankingError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

// Loss family applied to the wrong dataset kind, or mismatched metadata.
class KindMismatchError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

class InvalidPolicyError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

// Operation needs clean labels or other fields a redacted view lacks.
class ProvenanceError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

// Feature coverage too weak for the requested quantity.
class CoverageError : public InvalidInputError {
 public:
  using InvalidInputError::InvalidInputError;
};

// Non-finite values or overflow in a numeric kernel. CLI exit 3.
class NumericRangeError : public Error {
 public:
  using Error::Error;
};

// Optimizer produced a non-finite iterate; message names the step.
class DivergedError : public NumericRangeError {
 public:
  using NumericRangeError::NumericRangeError;
};

}  // namespace robustpref
