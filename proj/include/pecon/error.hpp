#pragma once

#include <stdexcept>
#include <string>

namespace pecon {

// Stable failure categories. The message carries the specifics (row
// numbers, patient ids, paths); the kind is what callers switch on.
enum class ErrorKind {
  io,
  parse,
  config,
  duplicate_id,
  width_mismatch,
  empty_input,
  invalid_argument,
  degenerate_input,
  corrupt_checkpoint,
  architecture_mismatch,
  missing_prerequisite,
  single_class,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::config: return "config";
    case ErrorKind::duplicate_id: return "duplicate-id";
    case ErrorKind::width_mismatch: return "width-mismatch";
    case ErrorKind::empty_input: return "empty-input";
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::degenerate_input: return "degenerate-input";
    case ErrorKind::corrupt_checkpoint: return "corrupt-checkpoint";
    case ErrorKind::architecture_mismatch: return "architecture-mismatch";
    case ErrorKind::missing_prerequisite: return "missing-prerequisite";
    case ErrorKind::single_class: return "single-class";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace pecon
