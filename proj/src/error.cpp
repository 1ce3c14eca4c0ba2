#include "maldet/error.hpp"

namespace maldet {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MalformedJson: return "MalformedJson";
    case ErrorKind::MissingBehaviorSection: return "MissingBehaviorSection";
    case ErrorKind::InvalidApiName: return "InvalidApiName";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::UnlabeledSample: return "UnlabeledSample";
    case ErrorKind::DuplicateHash: return "DuplicateHash";
    case ErrorKind::CsvSchemaError: return "CsvSchemaError";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::UnknownId: return "UnknownId";
    case ErrorKind::DegenerateSplit: return "DegenerateSplit";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NumericError: return "NumericError";
    case ErrorKind::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorKind::CorruptBundle: return "CorruptBundle";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace maldet
