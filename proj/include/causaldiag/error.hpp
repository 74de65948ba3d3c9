#pragma once

#include <stdexcept>
#include <string>

namespace causaldiag {

/// Broad failure category, used by the HTTP layer to pick a status code.
enum class ErrorKind {
  invalid_argument,
  not_found,
  conflict,
  parse,
  degenerate,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace causaldiag
