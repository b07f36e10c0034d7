#pragma once

#include <stdexcept>
#include <string>

namespace prosparse {

enum class ErrorKind {
  kParse,       // malformed bracketed input
  kData,        // missing / inconsistent data
  kAlignment,   // token or sentence misalignment between inputs
  kVocabulary,  // label or word vocabulary mismatch
  kCheckpoint,  // checkpoint format or architecture mismatch
  kShape,       // tensor shape mismatch
  kNumeric,     // NaN / divergence
  kConfig,      // invalid configuration
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Exit codes used by the command line front end.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kNumeric:
      return 4;
    default:
      return 3;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace prosparse
