#pragma once

#include <stdexcept>
#include <string>

namespace fimscan {

// Base for everything this library throws deliberately.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- input / configuration errors (CLI exit code 2) ---

struct FileUnreadable : Error {
  using Error::Error;
};
struct UnknownFile : Error {
  using Error::Error;
};
struct LineOutOfRange : Error {
  using Error::Error;
};
struct DuplicateLabel : Error {
  using Error::Error;
};
struct InsufficientPopulation : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};
struct EmptyClass : Error {
  using Error::Error;
};
struct EmptyGroup : Error {
  using Error::Error;
};
struct FunctionWithoutLines : Error {
  using Error::Error;
};
struct NegativeLoss : Error {
  using Error::Error;
};

// --- backend errors (CLI exit code 3) ---

struct BackendError : Error {
  using Error::Error;
};
// Transport-level failure that survived the retry budget.
struct BackendUnavailable : BackendError {
  using BackendError::BackendError;
};
// Reply arrived but does not follow the wire schema.
struct BackendMalformedReply : BackendError {
  using BackendError::BackendError;
};
// Backend reports the prompt is too long; the scanner reacts by shrinking
// the context window, never by skipping the line.
struct ContextOverflow : BackendError {
  using BackendError::BackendError;
};

}  // namespace fimscan
