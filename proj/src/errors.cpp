#include "branchlens/errors.hpp"

namespace branchlens {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::DanglingTensorRef: return "DanglingTensorRef";
        case ErrorCode::DuplicateSampleId: return "DuplicateSampleId";
        case ErrorCode::DuplicateComponent: return "DuplicateComponent";
        case ErrorCode::NotFound: return "NotFound";
        case ErrorCode::CorruptHeader: return "CorruptHeader";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::DegenerateSampleCount: return "DegenerateSampleCount";
        case ErrorCode::NotSymmetric: return "NotSymmetric";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::MissingComponent: return "MissingComponent";
        case ErrorCode::InconsistentK: return "InconsistentK";
        case ErrorCode::SingleClassDataset: return "SingleClassDataset";
        case ErrorCode::NonFiniteFeature: return "NonFiniteFeature";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::MissingCovers: return "MissingCovers";
        case ErrorCode::TooManyFeatures: return "TooManyFeatures";
        case ErrorCode::NoSamplesForAttack: return "NoSamplesForAttack";
        case ErrorCode::LayoutMismatch: return "LayoutMismatch";
        case ErrorCode::EmptyBlock: return "EmptyBlock";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::DegenerateLength: return "DegenerateLength";
        case ErrorCode::InsufficientSamples: return "InsufficientSamples";
        case ErrorCode::EmptyScores: return "EmptyScores";
        case ErrorCode::ZeroVariance: return "ZeroVariance";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
    }
    return "UnknownError";
}

}  // namespace branchlens
