#pragma once

#include "mbmpc/dynamics.hpp"
#include "mbmpc/types.hpp"

namespace mbmpc {

/// Quadratic stage and terminal weights. All three matrices are checked for
/// symmetric positive definiteness at construction.
struct CostSpec {
    Matrix state_weight;     // n x n
    Matrix input_weight;     // m x m
    Matrix terminal_weight;  // n x n

    CostSpec(Matrix Q, Matrix R, Matrix P);

    /// Convenience for scalar-input systems.
    static CostSpec scalar_input(Matrix Q, double r, Matrix P);
};

/// Minimum-eigenvalue certificate that the weights admit class-K lower and
/// upper bounds on the cost functions.
struct ComparisonBoundsReport {
    double min_eig_state = 0.0;
    double min_eig_input = 0.0;
    double min_eig_terminal = 0.0;
    bool pass = false;
};

double stage_cost(const CostSpec& spec, const StateVector& x,
                  const InputVector& u);

double terminal_cost(const CostSpec& spec, const StateVector& xN);

/// Horizon cost along the rollout of useq from x0. Fused with the rollout;
/// the summation runs back to front (see sum_backwards) so that
/// total_cost(x0, u) == stage_cost(x0, u0) + total_cost(f(x0,u0), u1..)
/// holds bit-exactly.
double total_cost(const SystemModel& model, const CostSpec& spec,
                  const StateVector& x0, const InputSequence& useq);

/// Same value computed from an already-available trajectory (logging paths).
double total_cost(const CostSpec& spec, const OpenLoopTrajectory& traj);

ComparisonBoundsReport verify_comparison_bounds(const CostSpec& spec);

/// Matrix-level variant for candidate weights that may not pass CostSpec
/// construction (the report carries the failure instead of throwing).
ComparisonBoundsReport verify_comparison_bounds(const Matrix& Q, const Matrix& R,
                                                const Matrix& P);

}  // namespace mbmpc
