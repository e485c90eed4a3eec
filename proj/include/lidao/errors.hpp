#pragma once

#include <stdexcept>
#include <string>

namespace lidao {

// Base class for all laboratory errors.
struct LabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config / input-file problems (CLI exit code 2).
struct ConfigError : LabError {
    using LabError::LabError;
};

// Sampling or mixing produced a distribution with no mass to draw from.
struct DegenerateDistributionError : LabError {
    using LabError::LabError;
};

// Non-finite values inside losses, gradients or optimizer updates.
struct NumericFailureError : LabError {
    using LabError::LabError;
};

// Enumeration or construction exceeds the configured size guard.
struct BudgetError : LabError {
    using LabError::LabError;
};

// Principal-component extraction on a rank-0 (all identical) embedding set.
struct DegenerateSeedSetError : LabError {
    using LabError::LabError;
};

// A bias metric was asked to compare against an empty group.
struct InsufficientDataError : LabError {
    using LabError::LabError;
};

} // namespace lidao
