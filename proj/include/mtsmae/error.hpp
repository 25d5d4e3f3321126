#pragma once

#include <stdexcept>
#include <string>

namespace mtsmae {

enum class ErrorKind {
  Config,     // invalid configuration or hyperparameter
  Dimension,  // shape mismatch between arrays or segments
  Index,      // lookup id out of range
  Data,       // malformed or unusable input data
  Training,   // divergence or non-finite values during optimization
  Transfer,   // checkpoint/model incompatibility
  Io,         // filesystem failures
};

const char* error_kind_name(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mtsmae
