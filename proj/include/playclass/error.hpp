#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace playclass {

/// Malformed input text or binary payload. Carries the 1-based line number
/// (0 when the error is not line oriented).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of an API (wrong shapes, unfitted transforms, bad configuration).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace playclass
