#pragma once

#include <stdexcept>
#include <string>

namespace fbsde {

// Shape/broadcast violations in tensor and graph operations.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent run configuration.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numerical failure (e.g. a factorization that lost positive definiteness).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values produced during training. Carries the iteration and
// time-step index where the blow-up was first observed (-1 when unknown).
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, long iteration_, int step_)
        : std::runtime_error(msg), iteration(iteration_), step(step_) {}
    long iteration;
    int step;
};

} // namespace fbsde
