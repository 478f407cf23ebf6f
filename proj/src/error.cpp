#include "partyvec/error.hpp"

namespace partyvec {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ZeroNormVector: return "ZeroNormVector";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::OffsetOverlap: return "OffsetOverlap";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::TokenOutOfVocab: return "TokenOutOfVocab";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::LayerOutOfRange: return "LayerOutOfRange";
    case ErrorCode::PlantCollision: return "PlantCollision";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::EmptyVariable: return "EmptyVariable";
    case ErrorCode::UnboundPlaceholder: return "UnboundPlaceholder";
    case ErrorCode::UnknownValue: return "UnknownValue";
    case ErrorCode::NegativeWeight: return "NegativeWeight";
    case ErrorCode::EmptyValueSet: return "EmptyValueSet";
    case ErrorCode::NonPositiveCosineInSet: return "NonPositiveCosineInSet";
    case ErrorCode::IncompleteCube: return "IncompleteCube";
    case ErrorCode::DuplicateCell: return "DuplicateCell";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::AllNonPositive: return "AllNonPositive";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::AxisMismatch: return "AxisMismatch";
    case ErrorCode::NoValidCells: return "NoValidCells";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::UnknownParty: return "UnknownParty";
    case ErrorCode::SizeTooSmall: return "SizeTooSmall";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
    case ErrorCode::GateFailed: return "GateFailed";
  }
  return "Unknown";
}

}  // namespace partyvec
