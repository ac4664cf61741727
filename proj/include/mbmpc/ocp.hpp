#pragma once

#include <functional>

#include "mbmpc/blocking.hpp"
#include "mbmpc/objective.hpp"
#include "mbmpc/terminal_design.hpp"
#include "mbmpc/types.hpp"

namespace mbmpc {

/// Admissibility data of one horizon problem: state box, compact input box
/// and the terminal sublevel set.
struct ConstraintSet {
    Box state_box;
    Box input_box;
    TerminalSet terminal;

    ConstraintSet(Box state, Box input, TerminalSet term);
};

/// Rollout-based admissibility check result. feasible holds iff every
/// violation is within the feasibility tolerance.
struct AdmissibilityReport {
    static constexpr double kFeasTol = 1e-8;

    bool feasible = false;
    double state_violation = 0.0;
    double input_violation = 0.0;
    double terminal_margin = 0.0;  // lf(x(N)) - level, signed
};

/// Sparse nonlinear program over multiple-shooting variables.
///
/// Decision layout: shooting states s_0..s_S (S = number of blocks), then
/// the blocked inputs, then (offset problems only) the scalar lambda.
/// Equalities: initial-state pin followed by one defect row block per
/// shooting interval. Inequalities (all written g(v) <= 0): state box at
/// every intra-block step, input rows, then the terminal level row.
/// The objective is a sum of squares of `residuals`; evaluators are pure.
struct NlpProblem {
    struct Evaluation {
        Vector eq;
        Vector ineq;
        Vector residuals;
        double objective = 0.0;
    };

    int num_vars = 0;
    int num_eq = 0;
    int num_ineq = 0;
    int num_residuals = 0;
    int state_dim = 0;
    int input_dim = 0;
    int num_nodes = 0;   // S + 1
    int num_blocks = 0;  // M
    bool has_lambda = false;
    int lambda_col = -1;

    std::function<double(const Vector&)> objective;
    std::function<Vector(const Vector&)> equality;
    std::function<Vector(const Vector&)> inequality;
    std::function<Vector(const Vector&)> residuals;
    /// Single-pass evaluation of everything above.
    std::function<Evaluation(const Vector&)> evaluate;

    SparsityPattern eq_sparsity;
    SparsityPattern ineq_sparsity;
    SparsityPattern residual_sparsity;

    int node_col(int j) const { return j * state_dim; }
    int block_col(int j) const { return num_nodes * state_dim + j * input_dim; }
};

/// Exhaustive grid oracle result; cell_bound is the largest cost jump
/// between adjacent admissible grid points (a grid-resolution Lipschitz
/// estimate used by solver acceptance tests).
struct BruteForceResult {
    bool feasible = false;
    BlockedSequence best;
    double best_cost = 0.0;
    double cell_bound = 0.0;
};

ConstraintSet benchmark_constraints(const TerminalIngredients& ing);

/// Checks the state box at k = 0..N-1, the input box everywhere, and
/// terminal-set membership at k = N along the exact rollout.
AdmissibilityReport evaluate_admissibility(const SystemModel& model,
                                           const ConstraintSet& cons,
                                           const StateVector& x0,
                                           const InputSequence& useq);

/// Move-blocked OCP as a multiple-shooting NLP; the shooting grid equals the
/// blocking grid.
NlpProblem assemble_blocked(const SystemModel& model, const CostSpec& spec,
                            const ConstraintSet& cons, const StateVector& x0,
                            int N, const BlockingPattern& pattern);

/// Offset move-blocked OCP: inputs are the blocked correction plus lambda
/// times the warm-start; input bounds become coupled linear rows and the
/// objective gains eta*(lambda-1)^2.
NlpProblem assemble_offset(const SystemModel& model, const CostSpec& spec,
                           const ConstraintSet& cons, const StateVector& x0,
                           int N, const BlockingPattern& pattern,
                           const InputSequence& warmstart, double eta);

/// Stacked constraint-Jacobian pattern: equality rows first, inequality rows
/// offset by num_eq.
SparsityPattern jacobian_sparsity(const NlpProblem& problem);

/// Human-readable problem summary (dimensions, nonzero counts).
std::string describe(const NlpProblem& problem);

/// Exhaustive evaluation of expanded blocked sequences on a uniform input
/// grid. Guarded to m*M <= 4 decision dimensions and at most 21 points each.
BruteForceResult brute_force_solve(const SystemModel& model, const CostSpec& spec,
                                   const ConstraintSet& cons, const StateVector& x0,
                                   int N, const BlockingPattern& pattern,
                                   int grid_points_per_dim);

/// Initial decision vector with shooting nodes on the exact rollout of the
/// expanded blocked sequence (defects vanish identically).
Vector consistent_initial_point(const NlpProblem& problem, const SystemModel& model,
                                const StateVector& x0, const BlockingPattern& pattern,
                                const BlockedSequence& blocked,
                                const InputSequence* warmstart = nullptr,
                                double lambda = 0.0);

}  // namespace mbmpc
