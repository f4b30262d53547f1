#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pcsharp {

enum class ErrorKind {
  InvalidArgument,
  CyclicGraph,
  MalformedFile,
  NotATree,
  ScopeMismatch,
  NotAChild,
  StaleTrace,
  NotConverged,
  CostGuardExceeded,
  DepthTooLarge,
  MissingFile,
  ShapeMismatch,
  ParseError,
  UnknownManifold,
  ZeroTrainNLL,
  DivergedNaN,
  CapExceeded,
};

std::string_view to_string(ErrorKind kind);

/// Library-wide exception. `kind()` identifies the failure class so callers
/// (tests, the CLI exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pcsharp
