#pragma once

#include <stdexcept>
#include <string>

namespace isacwf {

/// A FIM block (or one of its Schur complements) is singular or too badly
/// conditioned to invert. `block()` names the offending block.
class SingularFimError : public std::runtime_error {
public:
    SingularFimError(std::string block, double condition)
        : std::runtime_error("singular FIM block " + block + " (condition number " +
                             std::to_string(condition) + ")"),
          block_(std::move(block)), condition_(condition) {}

    const std::string& block() const noexcept { return block_; }
    double condition() const noexcept { return condition_; }

private:
    std::string block_;
    double condition_;
};

/// The allocation problem has no feasible point. `constraint()` names the
/// binding constraint ("spectral-efficiency", "occupancy", ...).
class InfeasibleError : public std::runtime_error {
public:
    InfeasibleError(std::string constraint, const std::string& detail)
        : std::runtime_error("infeasible (" + constraint + "): " + detail),
          constraint_(std::move(constraint)) {}

    const std::string& constraint() const noexcept { return constraint_; }

private:
    std::string constraint_;
};

/// Contiguous block placement gave up after its retry budget.
class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A brute-force routine was asked to do more work than its budget allows.
class BudgetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace isacwf
