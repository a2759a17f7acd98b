#include "medimux/error.hpp"

namespace medimux {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::InsufficientRows: return "InsufficientRows";
    case ErrorCode::SingularResidualCovariance: return "SingularResidualCovariance";
    case ErrorCode::SeparationDetected: return "SeparationDetected";
    case ErrorCode::CholeskyFailure: return "CholeskyFailure";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::QuadratureNotConverged: return "QuadratureNotConverged";
    case ErrorCode::InvalidDataset: return "InvalidDataset";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SampleTooLarge: return "SampleTooLarge";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorCode::NonBinaryOutcome: return "NonBinaryOutcome";
    case ErrorCode::EmptyAfterFiltering: return "EmptyAfterFiltering";
    case ErrorCode::NonPositiveValue: return "NonPositiveValue";
    case ErrorCode::CacheFormat: return "CacheFormat";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace medimux
