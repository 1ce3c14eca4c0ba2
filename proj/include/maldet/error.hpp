#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maldet {

/// Failure categories surfaced by the library. The CLI maps these to exit codes.
enum class ErrorKind {
  // report ingestion
  MalformedJson,
  MissingBehaviorSection,
  InvalidApiName,
  EmptySequence,
  UnlabeledSample,
  DuplicateHash,
  CsvSchemaError,
  // text pipeline
  EmptyCorpus,
  UnknownId,
  DegenerateSplit,
  // arrays / autodiff
  ShapeMismatch,
  NumericError,
  DisconnectedGraph,
  // model
  InvalidConfig,
  FormatVersionMismatch,
  CorruptBundle,
  // training / explanation
  NonFiniteLoss,
  SingularSystem,
  IoError,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace maldet
