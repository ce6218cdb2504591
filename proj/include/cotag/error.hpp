#pragma once

#include <stdexcept>
#include <string>

namespace cotag {

// Base class for every error raised by this library. Callers that want a
// single catch site can catch this; more specific types below carry intent.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A span list handed to the encoder overlaps or falls outside the sentence.
class SpanConflictError : public Error {
 public:
  using Error::Error;
};

// A tag, slot, or label sequence does not fit the active slot schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// An input file is missing, unreadable, or malformed. Messages carry the
// path and, for line-oriented formats, the offending line number.
class LoadError : public Error {
 public:
  using Error::Error;
};

// The external fluency scorer failed to start, broke the wire protocol,
// timed out, or exited. Callers may fall back to the native scorer.
class ScorerUnavailableError : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite loss or an entire ensemble diverged.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace cotag
