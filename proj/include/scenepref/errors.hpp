#pragma once

#include <stdexcept>
#include <string>

namespace scenepref {

// Base class for every error this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input records (manifests, datasets, checkpoints).
struct SchemaError : Error {
  using Error::Error;
};

// Invalid configuration: bad flag combinations, unknown tags, wrong arity,
// unresolved template slots.
struct ConfigError : Error {
  using Error::Error;
};

// Token or word outside the policy vocabulary.
struct VocabError : Error {
  using Error::Error;
};

// An agent reply that could not be turned into a score or verdict.
// Carries the raw reply so callers can log what the agent actually said.
struct JudgeParseError : Error {
  JudgeParseError(const std::string& what, std::string reply)
      : Error(what), raw_reply(std::move(reply)) {}
  std::string raw_reply;
};

// Numeric preconditions violated (non-finite inputs, out-of-range scores).
struct NumericError : Error {
  using Error::Error;
};

// Empty input where at least one element is required.
struct EmptyInputError : Error {
  using Error::Error;
};

// A captioning or embedding backend failed; names the sample and prompt.
struct BackendError : Error {
  using Error::Error;
};

// A stage input artifact is missing or has a stale fingerprint.
struct DependencyError : Error {
  using Error::Error;
};

// A pairing rule would emit chosen == rejected.
struct DegeneratePairError : Error {
  using Error::Error;
};

// A rendered prompt would reveal the gold label outside the with-GT condition.
struct LeakageError : Error {
  using Error::Error;
};

}  // namespace scenepref
