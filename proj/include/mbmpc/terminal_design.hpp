#pragma once

#include "mbmpc/dynamics.hpp"
#include "mbmpc/objective.hpp"
#include "mbmpc/types.hpp"

namespace mbmpc {

/// Stabilizing terminal ingredients: Riccati terminal weight, linear gain,
/// level-set size and the cost scaling used in the Riccati recursion.
struct TerminalIngredients {
    Matrix riccati;     // n x n, symmetric positive definite
    Matrix gain;        // m x n, local law u = -gain * x
    double level = 0.0;     // sublevel value defining the terminal set
    double scaling = 1.0;   // Riccati cost scaling (>= 1)
};

/// Sublevel set { x : x' riccati x <= level } with a small membership slack
/// absorbing rounding at the boundary.
struct TerminalSet {
    Matrix riccati;
    double level = 0.0;

    static constexpr double kMembershipSlack = 1e-12;

    double value(const StateVector& x) const { return x.dot(riccati * x); }
    bool contains(const StateVector& x) const {
        return value(x) <= level + kMembershipSlack;
    }
};

/// Outcome of the sampling certificate for the terminal conditions.
/// Margins are signed; negative means satisfied with room to spare.
struct TerminalCertificate {
    bool pass = false;
    int samples = 0;
    double worst_invariance = 0.0;   // value(x+) - level
    double worst_clf = 0.0;          // value(x+) - value(x) + stage_cost
    double worst_input = 0.0;        // input-box violation of the local law
    double worst_state = 0.0;        // state-box violation of the sample
    StateVector witness_invariance;
    StateVector witness_clf;
    StateVector witness_input;
    StateVector witness_state;
};

/// Fixed-point solution of the scaled discrete Riccati equation
/// P = A'PA - (A'PB)(rho R + B'PB)^{-1}(B'PA) + rho Q, started at rho*Q.
/// Throws ConvergenceError when the iteration stalls and
/// StabilizabilityError when the resulting closed loop is not contractive.
Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q,
                  const Matrix& R, double rho);

/// Frobenius norm of P - rhs(P); the constructive residual oracle.
double dare_residual(const Matrix& P, const Matrix& A, const Matrix& B,
                     const Matrix& Q, const Matrix& R, double rho);

/// K = (rho R + B'PB)^{-1} B'PA.
Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& P,
                const Matrix& R, double rho);

/// Largest-magnitude eigenvalue of a square matrix.
double spectral_radius(const Matrix& M);

/// Linearizes the model at its steady state and assembles the full
/// ingredient bundle for a given level.
TerminalIngredients design_terminal_ingredients(const SystemModel& model,
                                                const CostSpec& spec,
                                                double rho, double level);

TerminalSet terminal_set(const TerminalIngredients& ing);

/// Local control law u = -K x.
InputVector local_control(const TerminalIngredients& ing, const StateVector& x);

/// Applies the local law N times along the closed local rollout. The start
/// state must lie in the terminal set.
InputSequence local_warmstart(const SystemModel& model,
                              const TerminalIngredients& ing,
                              const StateVector& x, int N);

/// Sampling certificate over a deterministic Halton grid of the level set
/// (boundary and interior): invariance, CLF decrease against the stage cost,
/// input admissibility of the local law, and state admissibility of the set.
TerminalCertificate validate_terminal_set(const SystemModel& model,
                                          const CostSpec& spec,
                                          const TerminalIngredients& ing,
                                          const Box& state_box,
                                          const Box& input_box, int samples);

/// Largest level (up to `tolerance` bisection width) whose certificate
/// passes. Throws DesignFailure if no positive level validates.
double calibrate_pi(const SystemModel& model, const CostSpec& spec,
                    const Matrix& riccati, const Matrix& gain, double scaling,
                    const Box& state_box, const Box& input_box, int samples,
                    double tolerance);

namespace detail {
/// i-th element (i >= 0) of the van der Corput sequence in the given base.
double halton(int index, int base);
/// Inverse standard-normal CDF (rational approximation, ~1e-9 accurate).
double inverse_normal_cdf(double p);
}  // namespace detail

}  // namespace mbmpc
