#pragma once

#include <stdexcept>
#include <string>

namespace isocorr {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A stated precondition does not hold (bad grid, bad parameter, budget violated).
struct PreconditionError : Error {
    using Error::Error;
};

/// Numerical failure inside an otherwise valid call.
struct NumericalError : Error {
    using Error::Error;
};

struct NotDecomposable : NumericalError {
    using NumericalError::NumericalError;
};

struct NoConvergence : NumericalError {
    using NumericalError::NumericalError;
};

struct JacobianSingular : NumericalError {
    using NumericalError::NumericalError;
};

struct DegenerateSeed : NumericalError {
    using NumericalError::NumericalError;
};

struct FailsMetricBounds : PreconditionError {
    using PreconditionError::PreconditionError;
};

struct NyquistViolation : PreconditionError {
    using PreconditionError::PreconditionError;
};

struct OrderingViolated : PreconditionError {
    using PreconditionError::PreconditionError;
};

struct DefectBlowup : NumericalError {
    using NumericalError::NumericalError;
};

struct NotAdmissible : NumericalError {
    using NumericalError::NumericalError;
};

struct ShortnessLost : NumericalError {
    using NumericalError::NumericalError;
};

struct NegativeTrace : NumericalError {
    using NumericalError::NumericalError;
};

struct LayerUnresolved : PreconditionError {
    using PreconditionError::PreconditionError;
};

struct FitDegenerate : NumericalError {
    using NumericalError::NumericalError;
};

struct ResolutionError : PreconditionError {
    using PreconditionError::PreconditionError;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

} // namespace isocorr
