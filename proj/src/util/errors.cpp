#include "util/errors.hpp"

namespace codex {

const char* err_name(Err e) {
  switch (e) {
    case Err::EmptyValue: return "EmptyValue";
    case Err::Unparseable: return "Unparseable";
    case Err::InvalidDates: return "InvalidDates";
    case Err::NoNumericValues: return "NoNumericValues";
    case Err::MalformedCode: return "MalformedCode";
    case Err::EmptyVocabulary: return "EmptyVocabulary";
    case Err::NoRetainedLabels: return "NoRetainedLabels";
    case Err::BadRatios: return "BadRatios";
    case Err::SpecInvalid: return "SpecInvalid";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::EmptyDataset: return "EmptyDataset";
    case Err::ModalityModelsMissing: return "ModalityModelsMissing";
    case Err::AllAbsent: return "AllAbsent";
    case Err::SystemUntrained: return "SystemUntrained";
    case Err::BadScope: return "BadScope";
    case Err::MissingConfidence: return "MissingConfidence";
    case Err::NoTrueLabels: return "NoTrueLabels";
    case Err::DegenerateRecord: return "DegenerateRecord";
    case Err::IndexOutOfRange: return "IndexOutOfRange";
    case Err::EmptySelection: return "EmptySelection";
    case Err::UnknownModality: return "UnknownModality";
    case Err::MissingArtifact: return "MissingArtifact";
    case Err::ConfigHashMismatch: return "ConfigHashMismatch";
    case Err::SchemaViolation: return "SchemaViolation";
    case Err::WorkdirLocked: return "WorkdirLocked";
    case Err::BadConfig: return "BadConfig";
    case Err::IoError: return "IoError";
  }
  return "UnknownError";
}

}  // namespace codex
