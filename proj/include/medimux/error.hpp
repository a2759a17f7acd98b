#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace medimux {

enum class ErrorCode {
    RankDeficient,
    InsufficientRows,
    SingularResidualCovariance,
    SeparationDetected,
    CholeskyFailure,
    NonPositiveScale,
    QuadratureNotConverged,
    InvalidDataset,
    InvalidArgument,
    SampleTooLarge,
    MissingColumn,
    NonBinaryTreatment,
    NonBinaryOutcome,
    EmptyAfterFiltering,
    NonPositiveValue,
    CacheFormat,
    Io,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type; `code()` is stable
// and is what the CLI prints in its machine-readable error object.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Carries the offending column (RankDeficient) or row (NonPositiveValue).
class IndexedError : public Error {
public:
    IndexedError(ErrorCode code, long index, const std::string& message)
        : Error(code, message), index_(index) {}

    long index() const noexcept { return index_; }

private:
    long index_;
};

}  // namespace medimux
