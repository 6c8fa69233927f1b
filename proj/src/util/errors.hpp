#pragma once

#include <stdexcept>
#include <string>

namespace codex {

// Error classes named in the module contracts. The CLI prints them as
// one-line machine-parseable diagnostics; the C API maps them to codes.
enum class Err {
  EmptyValue,
  Unparseable,
  InvalidDates,
  NoNumericValues,
  MalformedCode,
  EmptyVocabulary,
  NoRetainedLabels,
  BadRatios,
  SpecInvalid,
  ShapeMismatch,
  EmptyDataset,
  ModalityModelsMissing,
  AllAbsent,
  SystemUntrained,
  BadScope,
  MissingConfidence,
  NoTrueLabels,
  DegenerateRecord,
  IndexOutOfRange,
  EmptySelection,
  UnknownModality,
  MissingArtifact,
  ConfigHashMismatch,
  SchemaViolation,
  WorkdirLocked,
  BadConfig,
  IoError,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}

  Err code() const { return code_; }
  const char* code_name() const { return err_name(code_); }

 private:
  Err code_;
};

}  // namespace codex
