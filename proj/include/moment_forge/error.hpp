#pragma once

#include <stdexcept>
#include <string>

namespace moment_forge {

/** @brief A precondition or structural invariant was violated. */
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/** @brief A numeric guard fired (conditioning, collision, overflow, non-convergence). */
class NumericGuardError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** @brief Smallest singular value of the flow system fell below its floor. */
class ConditioningBreakdown : public NumericGuardError {
public:
    ConditioningBreakdown(double t, double sigma_min, double floor)
        : NumericGuardError("conditioning breakdown at t=" + std::to_string(t) +
                            ": sigma_min(Z)=" + std::to_string(sigma_min) +
                            " below floor " + std::to_string(floor)),
          t_(t), sigma_min_(sigma_min) {}

    double t() const noexcept { return t_; }
    double sigma_min() const noexcept { return sigma_min_; }

private:
    double t_;
    double sigma_min_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

inline void require_finite(double x, const char* name) {
    if (!(x - x == 0.0)) throw ValidationError(std::string(name) + " must be finite");
}

}  // namespace detail
}  // namespace moment_forge
