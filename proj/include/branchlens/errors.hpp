#pragma once

// Typed error surface shared by every branchlens module. Each failure mode
// the library can produce maps to one ErrorCode so callers can branch on
// code() instead of parsing messages.

#include <stdexcept>
#include <string>

namespace branchlens {

enum class ErrorCode {
    // dataio
    MissingFile,
    SchemaViolation,
    DanglingTensorRef,
    DuplicateSampleId,
    DuplicateComponent,
    NotFound,
    CorruptHeader,
    NonFiniteValue,
    IoFailure,
    // spectral
    DegenerateSampleCount,
    NotSymmetric,
    NoConvergence,
    MissingComponent,
    InconsistentK,
    // gbdt
    SingleClassDataset,
    NonFiniteFeature,
    EmptyDataset,
    DimensionMismatch,
    // treeshap
    MissingCovers,
    TooManyFeatures,
    // attribution
    NoSamplesForAttack,
    LayoutMismatch,
    EmptyBlock,
    LengthMismatch,
    DegenerateLength,
    InsufficientSamples,
    // evaluation
    EmptyScores,
    ZeroVariance,
    EmptyInput,
    OutOfRange,
    // synth / cli
    InvalidConfig,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

// Exit-code category used by the CLI: config mistakes exit 2, data errors 3.
inline bool is_config_error(ErrorCode code) {
    return code == ErrorCode::InvalidConfig;
}

}  // namespace branchlens
