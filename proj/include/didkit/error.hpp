#pragma once

#include <stdexcept>
#include <string>

namespace didkit {

/// Failure raised by every estimator and loader. `code()` is a stable
/// upper-case identifier (e.g. "NO_NEVER_TREATED") used in CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)), message_(message) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string code_;
  std::string message_;
};

}  // namespace didkit
