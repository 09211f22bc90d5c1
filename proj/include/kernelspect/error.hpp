#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kernelspect {

enum class ErrorCode {
  // tensor_io
  MalformedHeader,
  UnsupportedDtype,
  TruncatedPayload,
  IoFailure,
  MissingTensor,
  ShapeMismatch,
  CyclicGraph,
  UnknownOpKind,
  UnknownLayer,
  MalformedManifest,
  InconsistentManifests,
  EmptySeries,
  // spectra
  UnsupportedOrder,
  NonFiniteEntry,
  NoConvergence,
  // pruner
  EmptyUniverse,
  ZeroVanillaAccuracy,
  UniverseMismatch,
  // report / cli
  UnsupportedKind,
  EmptyGrid,
  InvalidArgument,
  // internal invariant broken; the CLI maps this to exit code 2
  InvariantViolation,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace kernelspect
