#pragma once

#include <stdexcept>
#include <string>

namespace fedcausal {

enum class ErrorCode {
  MissingTargetSite,
  EmptyTreatmentArm,
  DimensionMismatch,
  DomainViolation,
  SingleClassLabels,
  NonConvergence,
  RankDeficient,
  UnknownTarget,
  NoTargetRows,
  UnsupportedMeasureForMode,
  NonFiniteWeight,
  ProtocolViolation,
  EmptyGrid,
  PreconditionViolation,
  UnsupportedDgpForm,
  SchemaError,
  ConfigError,
  IoFailure,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; the code distinguishes the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Treatment arm missing in a site; carries the offending (site, arm).
class EmptyTreatmentArmError : public Error {
 public:
  EmptyTreatmentArmError(int site, int arm);
  int site() const noexcept { return site_; }
  int arm() const noexcept { return arm_; }

 private:
  int site_;
  int arm_;
};

}  // namespace fedcausal
