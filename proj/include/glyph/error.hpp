#pragma once

#include <stdexcept>
#include <string>

namespace glyph {

enum class ErrorCode {
    // corpus / vocab
    EmptyCorpus,
    IoError,
    InvalidUtf8,
    // tensors
    ShapeMismatch,
    NonScalarLoss,
    LengthMismatch,
    ZeroVector,
    NonFinite,
    // encoder
    InvalidConfig,
    VocabMismatch,
    BadMagic,
    VersionMismatch,
    // triggers
    NoTargetCharacter,
    NoWordBoundary,
    TriggerWordAbsent,
    DuplicateTrigger,
    TriggerNotInVocab,
    TargetTooLong,
    // training
    EmptyBatch,
    NoEligiblePrompts,
    DivergedLoss,
    // metrics
    DegenerateVariance,
    TooFewPrompts,
    TooFewSamples,
    DimensionMismatch,
    MissingLabels,
    // config
    ParseError,
    UnknownKey,
    InvalidValue,
};

const char* error_code_name(ErrorCode code);

/// Library-wide exception type carrying a stable error code plus a
/// human-readable message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace glyph
