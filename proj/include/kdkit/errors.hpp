// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kd {

enum class ErrorKind {
  NotFound,
  ConfigKey,
  Config,
  Numeric,
  Target,
  Shape,
  Batch,
  Subset,
  Data,
  CKAUndefined,
  Tap,
  Report,
  Parse,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so the CLI can map it
/// onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, std::string(to_string(kind)) + ": " + what);
}

/// 2 = configuration, 3 = data, 4 = numeric abort.
int exit_code_for(ErrorKind kind);

}  // namespace kd
