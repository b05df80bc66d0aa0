#pragma once

#include <stdexcept>
#include <string>

namespace dmp3dad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file or record could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside the domain an operation accepts.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Encoder model could not be loaded or run.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// An embedding is neither cached nor computable (no encoder attached).
class MissingEmbedding : public Error {
 public:
  using Error::Error;
};

}  // namespace dmp3dad
