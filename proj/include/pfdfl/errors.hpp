#pragma once

#include <stdexcept>
#include <string>

namespace pfdfl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Malformed input record (JSONL line, config document).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a dataset invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad magic or version in a binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint content does not fit the model it is loaded into.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or similar numeric breakdown during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class AnalysisError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pfdfl
