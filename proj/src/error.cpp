#include "glyph/error.hpp"

namespace glyph {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::InvalidUtf8: return "InvalidUtf8";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonScalarLoss: return "NonScalarLoss";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::VocabMismatch: return "VocabMismatch";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::NoTargetCharacter: return "NoTargetCharacter";
        case ErrorCode::NoWordBoundary: return "NoWordBoundary";
        case ErrorCode::TriggerWordAbsent: return "TriggerWordAbsent";
        case ErrorCode::DuplicateTrigger: return "DuplicateTrigger";
        case ErrorCode::TriggerNotInVocab: return "TriggerNotInVocab";
        case ErrorCode::TargetTooLong: return "TargetTooLong";
        case ErrorCode::EmptyBatch: return "EmptyBatch";
        case ErrorCode::NoEligiblePrompts: return "NoEligiblePrompts";
        case ErrorCode::DivergedLoss: return "DivergedLoss";
        case ErrorCode::DegenerateVariance: return "DegenerateVariance";
        case ErrorCode::TooFewPrompts: return "TooFewPrompts";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::MissingLabels: return "MissingLabels";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::UnknownKey: return "UnknownKey";
        case ErrorCode::InvalidValue: return "InvalidValue";
    }
    return "UnknownError";
}

}  // namespace glyph
