#pragma once

#include <stdexcept>
#include <string>

namespace qfc {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Two operands with incompatible matrix dimensions.
class DimensionError : public Error {
public:
    DimensionError(const std::string& where, long lhs, long rhs)
        : Error(where + ": dimension mismatch, " + std::to_string(lhs) +
                " vs " + std::to_string(rhs)),
          lhs_dim(lhs), rhs_dim(rhs) {}
    long lhs_dim;
    long rhs_dim;
};

// Invalid model parameters or malformed configuration input.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Numerical failure during integration: non-finite state, positivity loss,
// overflow.  step_index is the step at which the failure was detected,
// or -1 when not applicable.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg, long step = -1)
        : Error(step >= 0 ? msg + " (step " + std::to_string(step) + ")" : msg),
          step_index(step) {}
    long step_index;
};

// Dynamic-programming solver failure (stability bound, NaN in a slice).
// max_admissible_dt carries the largest stable time step when relevant.
class SolverError : public Error {
public:
    explicit SolverError(const std::string& msg, double max_dt = 0.0)
        : Error(msg), max_admissible_dt(max_dt) {}
    double max_admissible_dt;
};

// Stale or incompatible on-disk artifact (e.g. policy hash mismatch).
class ArtifactError : public Error {
public:
    using Error::Error;
};

}  // namespace qfc
