#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfliq {

/// Raised for invalid parameters or inconsistent shapes.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when two fields or trajectories do not live on the same ensemble layout.
class ShapeMismatch : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// NaN/overflow, or a Riccati solution that leaves its admissible region.
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A fixed-point iteration exhausted its budget. Carries the residual history.
class NonConvergence : public std::runtime_error {
public:
    NonConvergence(const std::string& what, std::vector<double> history)
        : std::runtime_error(what), history_(std::move(history)) {}

    const std::vector<double>& residual_history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

/// A model failed its feasibility (assumption) check.
class Infeasible : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mfliq
