#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace partyvec {

enum class ErrorCode {
  // tensor_core
  ShapeMismatch,
  ZeroNormVector,
  NonFiniteValue,
  MalformedHeader,
  OffsetOverlap,
  TruncatedPayload,
  MissingTensor,
  DuplicateName,
  // ref_transformer
  TokenOutOfVocab,
  SequenceTooLong,
  LayerOutOfRange,
  PlantCollision,
  InvalidConfig,
  // probe
  EmptyCorpus,
  DegenerateLabels,
  NonFiniteLoss,
  // vector_extract
  KTooLarge,
  // persona
  EmptyVariable,
  UnboundPlaceholder,
  UnknownValue,
  NegativeWeight,
  // scaling
  EmptyValueSet,
  NonPositiveCosineInSet,
  IncompleteCube,
  DuplicateCell,
  // analytics
  EmptyGroup,
  AllNonPositive,
  EmptyList,
  AxisMismatch,
  NoValidCells,
  RankDeficient,
  InsufficientData,
  UnknownParty,
  // cli / io
  SizeTooSmall,
  MissingArtifact,
  HashMismatch,
  IoError,
  MalformedCsv,
  GateFailed,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace partyvec
