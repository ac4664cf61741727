#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace mbmpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// State and input vectors are plain dense vectors; dimensions are owned and
/// validated by the SystemModel they belong to.
using StateVector = Vector;
using InputVector = Vector;
using InputSequence = std::vector<InputVector>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Argument dimensions do not match the owning model.
struct DimensionError : Error {
    using Error::Error;
};

/// Invalid construction parameter (non-positive step size, bad pattern, ...).
struct ParameterError : Error {
    using Error::Error;
};

/// A rollout produced a non-finite state.
struct RolloutOverflow : Error {
    RolloutOverflow(const std::string& what, int step)
        : Error(what), step_index(step) {}
    int step_index;
};

/// Iterative scheme failed to converge within its budget.
struct ConvergenceError : Error {
    using Error::Error;
};

struct StabilizabilityError : Error {
    using Error::Error;
};

/// A state was required to lie in the terminal set but does not.
struct TerminalMembershipError : Error {
    using Error::Error;
};

/// Terminal-set calibration found no admissible level.
struct DesignFailure : Error {
    using Error::Error;
};

/// Brute-force oracle guard violated.
struct TractabilityError : Error {
    using Error::Error;
};

/// No admissible initial extended state could be constructed.
struct InitializationError : Error {
    using Error::Error;
};

/// Non-finite function value where a finite one is required.
struct EvaluationError : Error {
    using Error::Error;
};

/// Closed-loop step could not produce an admissible input (plain-blocked mode).
struct StepFailure : Error {
    using Error::Error;
};

/// Axis-aligned box, used for state and input constraint sets.
struct Box {
    Vector lower;
    Vector upper;

    Box() = default;
    Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
        if (lower.size() != upper.size())
            throw DimensionError("Box: bound dimensions differ");
        if ((upper.array() < lower.array()).any())
            throw ParameterError("Box: empty box (upper < lower)");
    }

    /// Symmetric box [-b, b]^dim.
    static Box symmetric(int dim, double b) {
        return Box(Vector::Constant(dim, -b), Vector::Constant(dim, b));
    }

    int dim() const { return static_cast<int>(lower.size()); }

    bool contains(const Vector& v, double tol = 0.0) const {
        return violation(v) <= tol;
    }

    /// Largest bound violation of v, 0 if inside.
    double violation(const Vector& v) const {
        double worst = 0.0;
        for (int i = 0; i < v.size(); ++i) {
            worst = std::max(worst, lower[i] - v[i]);
            worst = std::max(worst, v[i] - upper[i]);
        }
        return worst;
    }
};

/// (row, col) index pair marking a structural nonzero of a Jacobian.
struct SparsityEntry {
    int row = 0;
    int col = 0;
};

using SparsityPattern = std::vector<SparsityEntry>;

/// Sums terms back to front. Gives a fixed association order so that
/// cost telescoping identities hold bit-exactly.
inline double sum_backwards(const std::vector<double>& terms) {
    double acc = 0.0;
    for (auto it = terms.rbegin(); it != terms.rend(); ++it) acc = *it + acc;
    return acc;
}

}  // namespace mbmpc
