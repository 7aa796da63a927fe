#include "sentinel/error.hpp"

namespace sentinel {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FrameTooShort: return "FrameTooShort";
    case ErrorCode::FieldOutOfRange: return "FieldOutOfRange";
    case ErrorCode::InconsistentLengths: return "InconsistentLengths";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::RecordTooLong: return "RecordTooLong";
    case ErrorCode::MalformedSequence: return "MalformedSequence";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IdOutOfRange: return "IdOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::UnknownFreezeTarget: return "UnknownFreezeTarget";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::CompatibilityError: return "CompatibilityError";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadDataset: return "BadDataset";
  }
  return "Unknown";
}

}  // namespace sentinel
