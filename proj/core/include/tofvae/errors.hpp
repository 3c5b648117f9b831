#pragma once

#include <stdexcept>
#include <string>

namespace tofvae {

// Error taxonomy, mapped onto process exit codes by the CLI:
// usage -> 1, data -> 2, numeric -> 3.
enum class ErrorKind { Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  static Error usage(std::string m) { return {ErrorKind::Usage, std::move(m)}; }
  static Error data(std::string m) { return {ErrorKind::Data, std::move(m)}; }
  static Error numeric(std::string m) { return {ErrorKind::Numeric, std::move(m)}; }

 private:
  ErrorKind kind_;
};

}  // namespace tofvae
