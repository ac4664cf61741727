#pragma once

#include "mbmpc/ocp.hpp"
#include "mbmpc/types.hpp"

namespace mbmpc {

enum class SolveStatus { improved, unimproved, infeasible_start, converged };

const char* to_string(SolveStatus status);

struct SolverConfig {
    int max_iterations = 50;
    /// Inequality feasibility tolerance for qualifying iterates.
    double eps_feas = 1e-8;
    /// Equality (shooting defect) tolerance; kept tighter than eps_feas so
    /// qualified iterates survive exact-rollout re-validation downstream.
    double eps_feas_eq = 1e-8;
    /// Stationarity threshold on the step infinity norm.
    double eps_opt = 1e-8;
    /// Initial l1 merit penalty; grows with the QP multipliers and never
    /// shrinks within one solve.
    double merit_penalty = 1.0;
    double backtrack = 0.5;
    double min_step = 1e-10;
    bool log_iterates = false;
};

struct IterateRecord {
    int iteration = 0;
    double objective = 0.0;
    double eq_violation = 0.0;
    double ineq_violation = 0.0;
    double merit = 0.0;
    double penalty = 0.0;
    double step_size = 0.0;
};

/// Result contract: status == improved implies the returned point is
/// feasible (within the config tolerances) and its objective is strictly
/// below reference_objective. The solver never reports a worse point as an
/// improvement, and identical inputs produce identical outcomes.
struct SolveOutcome {
    Vector best_point;
    double best_objective = std::numeric_limits<double>::infinity();
    double max_violation = std::numeric_limits<double>::infinity();
    int iterations_used = 0;
    SolveStatus status = SolveStatus::unimproved;
    std::vector<IterateRecord> log;
};

/// Early-terminable SQP with Gauss-Newton curvature from the problem's
/// objective residuals, an l1 merit line search and an active-set QP on the
/// shooting-structured system. reference_objective encodes the cost the
/// returned point must beat (the buffered warm-start's cost in closed loop;
/// +infinity for cold solves).
SolveOutcome solve(const NlpProblem& problem, const Vector& initial_point,
                   double reference_objective, const SolverConfig& config);

/// Gauss-Newton minimization of the squared constraint violation; status is
/// converged iff the final violation meets the config tolerances.
SolveOutcome solve_feasibility(const NlpProblem& problem,
                               const Vector& initial_point,
                               const SolverConfig& config);

namespace detail {

/// Greedy distance-2 coloring: columns in one group share no row, so one
/// finite-difference pass recovers all their Jacobian columns.
std::vector<std::vector<int>> color_columns(const SparsityPattern& pattern,
                                            int num_cols);

/// Dense Jacobian (nonzeros only per the declared pattern) by central
/// differences over colored column groups.
Matrix colored_jacobian(const std::function<Vector(const Vector&)>& fn,
                        const Vector& v, int num_rows,
                        const SparsityPattern& pattern,
                        const std::vector<std::vector<int>>& groups);

struct QpResult {
    Vector step;
    Vector eq_multipliers;
    Vector ineq_multipliers;  // full-size, zero at inactive rows
    bool success = false;
};

/// Active-set method for min 1/2 d'Hd + g'd s.t. Aeq d + beq = 0,
/// Ain d + bin <= 0, with H positive definite. working_set is used as a
/// warm start and updated in place.
QpResult solve_qp(const Matrix& H, const Vector& g, const Matrix& Aeq,
                  const Vector& beq, const Matrix& Ain, const Vector& bin,
                  std::vector<int>& working_set);

}  // namespace detail

}  // namespace mbmpc
