#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "mbmpc/nlp_solver.hpp"
#include "mbmpc/ocp.hpp"

namespace mbmpc {

enum class ControllerMode { plain_blocked, buffered_fallback, offset };

const char* to_string(ControllerMode mode);

/// Which branch of the warm-start generation scheme produced the buffer for
/// the next step: the N-fold local law or the shifted-and-appended sequence.
enum class WarmstartBranch { local, shifted };

const char* to_string(WarmstartBranch branch);

/// Current state paired with the buffered stabilizing input sequence.
/// The buffer is admissible for x, and by construction satisfies the
/// warm-start cost bound inside the terminal set.
struct ExtendedState {
    StateVector x;
    InputSequence warmstart;
};

struct ControllerConfig {
    ControllerMode mode = ControllerMode::buffered_fallback;
    BlockingPattern pattern;
    SolverConfig solver = tightened_solver_defaults();
    double regularization = 1e-3;  // eta, offset mode only
    /// Per-step admissibility bookkeeping for audits (costs one extra
    /// rollout per step).
    bool check_invariants = false;

    /// Solver qualification kept tighter than the 1e-8 admissibility
    /// tolerance so candidates survive the exact-rollout re-validation.
    static SolverConfig tightened_solver_defaults() {
        SolverConfig cfg;
        cfg.max_iterations = 3;
        cfg.eps_feas = 1e-9;
        cfg.eps_feas_eq = 1e-11;
        return cfg;
    }
};

struct StepRecord {
    int n = 0;
    InputVector input;
    double value_function = 0.0;  // V(n) = J(x, warmstart)
    double realized_cost = 0.0;   // J(x, applied sequence)
    double stage = 0.0;           // l(x, u(n))
    WarmstartBranch branch = WarmstartBranch::shifted;
    bool fallback = false;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    int solver_iterations = 0;
    SolveStatus solve_status = SolveStatus::unimproved;
    double solver_violation = 0.0;
    InputVector warmstart_head;
    // Filled when check_invariants is on:
    double warmstart_violation = std::numeric_limits<double>::quiet_NaN();
    double offset_init_eq_residual = std::numeric_limits<double>::quiet_NaN();
    double offset_init_obj_gap = std::numeric_limits<double>::quiet_NaN();
};

struct TrajectoryLog {
    std::vector<StateVector> states;  // x(0..steps)
    std::vector<StepRecord> records;
    ControllerMode mode = ControllerMode::buffered_fallback;
    int horizon = 0;
    bool failed = false;
    std::string failure;
};

struct AuditViolation {
    int n = 0;
    double amount = 0.0;
};

/// Lyapunov-style audit of a closed-loop log: the value function must drop
/// by at least the realized stage cost, and realized costs never exceed the
/// buffered value. Violations are reported, not thrown.
struct AuditReport {
    static constexpr double kDecreaseSlack = 1e-6;
    static constexpr double kRealizedSlack = 1e-12;

    std::vector<AuditViolation> decrease_violations;
    std::vector<AuditViolation> realized_violations;
    double worst_decrease = -std::numeric_limits<double>::infinity();
    double worst_realized = -std::numeric_limits<double>::infinity();
    bool pass = false;
};

/// Shift-and-append: drops the applied input and extends with the local law
/// at the rollout's end state (which must lie in the terminal set).
InputSequence shift_append(const SystemModel& model,
                           const TerminalIngredients& ing, const StateVector& x,
                           const InputSequence& useq);

/// Warm-start generation for the successor state: the local sequence when
/// the successor is in the terminal set and locally cheaper, otherwise the
/// shifted sequence.
std::pair<InputSequence, WarmstartBranch> next_warmstart(
    const SystemModel& model, const CostSpec& spec,
    const TerminalIngredients& ing, const StateVector& x,
    const InputSequence& useq_applied);

SolverConfig initial_feasibility_defaults();

/// Admissible initial extended state: the local law inside the terminal set,
/// otherwise a feasibility solve over the blocked inputs. When the
/// configured pattern admits no solution the all-ones pattern is tried (the
/// unblocked initialization that realizes the admissible-initial-solution
/// assumption); failing that, throws InitializationError.
ExtendedState make_initial_extended_state(
    const SystemModel& model, const CostSpec& spec,
    const TerminalIngredients& ing, const ConstraintSet& cons,
    const StateVector& x0, const BlockingPattern& pattern,
    const SolverConfig& feasibility_config = initial_feasibility_defaults());

struct StepResult {
    InputVector applied;
    ExtendedState next;
    StepRecord record;
    InputSequence plan;  // the full sequence the applied input came from
};

/// One closed-loop step: solve the mode's OCP, re-validate the candidate on
/// the exact rollout (admissibility and cost no worse than the buffer),
/// apply the first input and emit the next buffered warm-start.
/// plain_blocked throws StepFailure when no admissible sequence is found.
StepResult controller_step(const SystemModel& model, const CostSpec& spec,
                           const TerminalIngredients& ing,
                           const ConstraintSet& cons,
                           const ControllerConfig& config,
                           const ExtendedState& z);

TrajectoryLog simulate_closed_loop(const SystemModel& model, const CostSpec& spec,
                                   const TerminalIngredients& ing,
                                   const ConstraintSet& cons,
                                   const ControllerConfig& config,
                                   const StateVector& x0, int steps);

AuditReport lyapunov_audit(const TrajectoryLog& log);

void write_trajectory_csv(std::ostream& os, const TrajectoryLog& log);
void write_trajectory_csv(const std::string& path, const TrajectoryLog& log);
TrajectoryLog read_trajectory_csv(std::istream& is);
TrajectoryLog read_trajectory_csv(const std::string& path);

std::string format_audit(const AuditReport& report, const TrajectoryLog& log);

}  // namespace mbmpc
