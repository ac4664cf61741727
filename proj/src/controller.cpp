#include "mbmpc/controller.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mbmpc {

namespace {

BlockedSequence block_means(const BlockingPattern& pattern,
                            const InputSequence& useq, int input_dim) {
    BlockedSequence blocked;
    blocked.entries.resize(pattern.num_blocks(), Vector::Zero(input_dim));
    int k = 0;
    for (int j = 0; j < pattern.num_blocks(); ++j) {
        for (int i = 0; i < pattern.block_lengths[j]; ++i, ++k)
            blocked.entries[j] += useq[k];
        blocked.entries[j] /= pattern.block_lengths[j];
    }
    return blocked;
}

InputSequence clipped_local_rollout(const SystemModel& model,
                                    const TerminalIngredients& ing,
                                    const Box& input_box, const StateVector& x0,
                                    int N) {
    InputSequence useq;
    useq.reserve(N);
    StateVector x = x0;
    for (int k = 0; k < N; ++k) {
        InputVector u = local_control(ing, x);
        for (int d = 0; d < u.size(); ++d)
            u[d] = std::min(input_box.upper[d], std::max(input_box.lower[d], u[d]));
        x = model.transition(x, u);
        useq.push_back(std::move(u));
    }
    return useq;
}

void clamp_to_box(InputSequence& useq, const Box& box) {
    for (auto& u : useq)
        for (int d = 0; d < u.size(); ++d)
            u[d] = std::min(box.upper[d], std::max(box.lower[d], u[d]));
}

BlockedSequence extract_blocked(const NlpProblem& problem, const Vector& point) {
    BlockedSequence blocked;
    blocked.entries.resize(problem.num_blocks);
    for (int j = 0; j < problem.num_blocks; ++j)
        blocked.entries[j] = point.segment(problem.block_col(j), problem.input_dim);
    return blocked;
}

double admissibility_violation(const AdmissibilityReport& report) {
    return std::max({report.state_violation, report.input_violation,
                     std::max(0.0, report.terminal_margin)});
}

/// Feasibility attempt for one pattern: clipped-local-law block means first,
/// zero inputs second. Returns an exactly admissible expansion or nothing.
std::optional<InputSequence> find_admissible_blocked(
    const SystemModel& model, const CostSpec& spec,
    const TerminalIngredients& ing, const ConstraintSet& cons,
    const StateVector& x0, const BlockingPattern& pattern,
    const SolverConfig& config) {
    const int N = pattern.horizon;
    const auto problem = assemble_blocked(model, spec, cons, x0, N, pattern);

    std::vector<BlockedSequence> guesses;
    guesses.push_back(block_means(
        pattern, clipped_local_rollout(model, ing, cons.input_box, x0, N),
        model.input_dim));
    BlockedSequence zeros;
    zeros.entries.resize(pattern.num_blocks(), Vector::Zero(model.input_dim));
    guesses.push_back(std::move(zeros));

    for (const auto& guess : guesses) {
        Vector v0;
        try {
            v0 = consistent_initial_point(problem, model, x0, pattern, guess);
        } catch (const RolloutOverflow&) {
            continue;
        }
        const auto outcome = solve_feasibility(problem, v0, config);
        if (outcome.status != SolveStatus::converged) continue;
        InputSequence full =
            expand(pattern, extract_blocked(problem, outcome.best_point));
        clamp_to_box(full, cons.input_box);
        const auto report = evaluate_admissibility(model, cons, x0, full);
        if (report.feasible) return full;
    }
    return std::nullopt;
}

}  // namespace

const char* to_string(ControllerMode mode) {
    switch (mode) {
        case ControllerMode::plain_blocked: return "plain-blocked";
        case ControllerMode::buffered_fallback: return "buffered-fallback";
        case ControllerMode::offset: return "offset";
    }
    return "unknown";
}

const char* to_string(WarmstartBranch branch) {
    return branch == WarmstartBranch::local ? "local" : "shifted";
}

SolverConfig initial_feasibility_defaults() {
    SolverConfig cfg;
    cfg.max_iterations = 300;
    cfg.eps_feas = 1e-11;
    cfg.eps_feas_eq = 1e-11;
    return cfg;
}

InputSequence shift_append(const SystemModel& model,
                           const TerminalIngredients& ing, const StateVector& x,
                           const InputSequence& useq) {
    if (useq.empty()) throw ParameterError("shift_append: empty sequence");
    const auto traj = rollout(model, x, useq);
    const StateVector& end_state = traj.states.back();
    const TerminalSet set = terminal_set(ing);
    if (!set.contains(end_state))
        throw TerminalMembershipError(
            "shift_append: rollout does not end in the terminal set");
    InputSequence shifted(useq.begin() + 1, useq.end());
    shifted.push_back(local_control(ing, end_state));
    return shifted;
}

std::pair<InputSequence, WarmstartBranch> next_warmstart(
    const SystemModel& model, const CostSpec& spec,
    const TerminalIngredients& ing, const StateVector& x,
    const InputSequence& useq_applied) {
    const int N = static_cast<int>(useq_applied.size());
    const StateVector x_next = step(model, x, useq_applied[0]);
    InputSequence shifted = shift_append(model, ing, x, useq_applied);
    const TerminalSet set = terminal_set(ing);
    if (set.contains(x_next)) {
        InputSequence local = local_warmstart(model, ing, x_next, N);
        const double local_cost = total_cost(model, spec, x_next, local);
        const double shifted_cost = total_cost(model, spec, x_next, shifted);
        if (local_cost <= shifted_cost)
            return {std::move(local), WarmstartBranch::local};
    }
    return {std::move(shifted), WarmstartBranch::shifted};
}

ExtendedState make_initial_extended_state(const SystemModel& model,
                                          const CostSpec& spec,
                                          const TerminalIngredients& ing,
                                          const ConstraintSet& cons,
                                          const StateVector& x0,
                                          const BlockingPattern& pattern,
                                          const SolverConfig& feasibility_config) {
    if (x0.size() != model.state_dim)
        throw DimensionError("make_initial_extended_state: bad state dimension");
    if (cons.state_box.violation(x0) > 0.0)
        throw InitializationError(
            "make_initial_extended_state: initial state outside the state box");

    const TerminalSet set = terminal_set(ing);
    if (set.contains(x0)) {
        return {x0, local_warmstart(model, ing, x0, pattern.horizon)};
    }

    if (auto w = find_admissible_blocked(model, spec, ing, cons, x0, pattern,
                                         feasibility_config))
        return {x0, std::move(*w)};

    // The restricted feasible set of the configured pattern may be empty at
    // x0 even when admissible sequences exist; the unblocked pattern
    // realizes the admissible-initial-solution assumption.
    const bool already_unblocked = pattern.num_blocks() == pattern.horizon;
    if (!already_unblocked) {
        const auto unblocked = uniform_pattern(pattern.horizon, pattern.horizon);
        if (auto w = find_admissible_blocked(model, spec, ing, cons, x0,
                                             unblocked, feasibility_config))
            return {x0, std::move(*w)};
    }
    throw InitializationError(
        "make_initial_extended_state: no admissible warm start found");
}

StepResult controller_step(const SystemModel& model, const CostSpec& spec,
                           const TerminalIngredients& ing,
                           const ConstraintSet& cons,
                           const ControllerConfig& config,
                           const ExtendedState& z) {
    const BlockingPattern& pattern = config.pattern;
    const int N = pattern.horizon;
    if (static_cast<int>(z.warmstart.size()) != N)
        throw DimensionError("controller_step: buffer length differs from horizon");

    StepRecord rec;
    rec.warmstart_head = z.warmstart[0];

    InputSequence chosen;
    if (config.mode == ControllerMode::offset) {
        const double V = total_cost(model, spec, z.x, z.warmstart);
        rec.value_function = V;
        const auto problem = assemble_offset(model, spec, cons, z.x, N, pattern,
                                             z.warmstart, config.regularization);
        BlockedSequence zeros;
        zeros.entries.resize(pattern.num_blocks(), Vector::Zero(model.input_dim));
        const Vector v0 = consistent_initial_point(problem, model, z.x, pattern,
                                                   zeros, &z.warmstart, 1.0);
        if (config.check_invariants) {
            const auto e0 = problem.evaluate(v0);
            rec.offset_init_eq_residual =
                e0.eq.size() ? e0.eq.cwiseAbs().maxCoeff() : 0.0;
            rec.offset_init_obj_gap = std::abs(e0.objective - V);
        }
        const auto outcome = solve(problem, v0, V, config.solver);
        rec.solver_iterations = outcome.iterations_used;
        rec.solve_status = outcome.status;
        rec.solver_violation = outcome.max_violation;

        InputSequence candidate = expand_offset(
            pattern, extract_blocked(problem, outcome.best_point), z.warmstart,
            outcome.best_point[problem.lambda_col]);
        const auto report = evaluate_admissibility(model, cons, z.x, candidate);
        const double candidate_cost =
            report.feasible ? total_cost(model, spec, z.x, candidate)
                            : std::numeric_limits<double>::infinity();
        if (report.feasible && candidate_cost <= V) {
            chosen = std::move(candidate);
            rec.realized_cost = candidate_cost;
            rec.lambda = outcome.best_point[problem.lambda_col];
            rec.fallback = false;
        } else {
            chosen = z.warmstart;
            rec.realized_cost = V;
            rec.lambda = 1.0;
            rec.fallback = true;
        }
    } else if (config.mode == ControllerMode::buffered_fallback) {
        const double V = total_cost(model, spec, z.x, z.warmstart);
        rec.value_function = V;
        const auto problem = assemble_blocked(model, spec, cons, z.x, N, pattern);
        const auto guess = block_means(pattern, z.warmstart, model.input_dim);
        const Vector v0 =
            consistent_initial_point(problem, model, z.x, pattern, guess);
        const auto outcome = solve(problem, v0, V, config.solver);
        rec.solver_iterations = outcome.iterations_used;
        rec.solve_status = outcome.status;
        rec.solver_violation = outcome.max_violation;

        bool accepted = false;
        if (outcome.status == SolveStatus::improved) {
            InputSequence candidate =
                expand(pattern, extract_blocked(problem, outcome.best_point));
            const auto report = evaluate_admissibility(model, cons, z.x, candidate);
            if (report.feasible) {
                const double candidate_cost =
                    total_cost(model, spec, z.x, candidate);
                if (candidate_cost <= V) {
                    chosen = std::move(candidate);
                    rec.realized_cost = candidate_cost;
                    accepted = true;
                }
            }
        }
        if (!accepted) {
            chosen = z.warmstart;
            rec.realized_cost = V;
        }
        rec.fallback = !accepted;
    } else {  // plain_blocked
        const auto problem = assemble_blocked(model, spec, cons, z.x, N, pattern);
        BlockedSequence zeros;
        zeros.entries.resize(pattern.num_blocks(), Vector::Zero(model.input_dim));
        Vector v0;
        try {
            v0 = consistent_initial_point(problem, model, z.x, pattern, zeros);
        } catch (const RolloutOverflow& e) {
            throw StepFailure(std::string("plain-blocked: cold rollout overflow: ") +
                              e.what());
        }
        const auto outcome = solve(problem, v0,
                                   std::numeric_limits<double>::infinity(),
                                   config.solver);
        rec.solver_iterations = outcome.iterations_used;
        rec.solve_status = outcome.status;
        rec.solver_violation = outcome.max_violation;
        if (outcome.status != SolveStatus::improved)
            throw StepFailure("plain-blocked: no admissible iterate found");
        InputSequence candidate =
            expand(pattern, extract_blocked(problem, outcome.best_point));
        const auto report = evaluate_admissibility(model, cons, z.x, candidate);
        if (!report.feasible)
            throw StepFailure("plain-blocked: candidate fails exact admissibility");
        chosen = std::move(candidate);
        rec.realized_cost = total_cost(model, spec, z.x, chosen);
        rec.value_function = rec.realized_cost;  // no buffer in this mode
        rec.fallback = false;
    }

    rec.input = chosen[0];
    rec.stage = stage_cost(spec, z.x, chosen[0]);

    StepResult result;
    result.applied = chosen[0];
    auto [next_buffer, branch] = next_warmstart(model, spec, ing, z.x, chosen);
    rec.branch = branch;
    result.next.x = step(model, z.x, chosen[0]);
    result.next.warmstart = std::move(next_buffer);
    result.plan = std::move(chosen);

    if (config.check_invariants) {
        const auto report = evaluate_admissibility(model, cons, result.next.x,
                                                   result.next.warmstart);
        rec.warmstart_violation = admissibility_violation(report);
    }

    result.record = std::move(rec);
    return result;
}

TrajectoryLog simulate_closed_loop(const SystemModel& model, const CostSpec& spec,
                                   const TerminalIngredients& ing,
                                   const ConstraintSet& cons,
                                   const ControllerConfig& config,
                                   const StateVector& x0, int steps) {
    TrajectoryLog log;
    log.mode = config.mode;
    log.horizon = config.pattern.horizon;
    ExtendedState z = make_initial_extended_state(model, spec, ing, cons, x0,
                                                  config.pattern);
    log.states.push_back(z.x);
    for (int n = 0; n < steps; ++n) {
        try {
            StepResult result = controller_step(model, spec, ing, cons, config, z);
            result.record.n = n;
            log.records.push_back(std::move(result.record));
            z = std::move(result.next);
            log.states.push_back(z.x);
        } catch (const StepFailure& e) {
            log.failed = true;
            log.failure = e.what();
            break;
        }
    }
    return log;
}

AuditReport lyapunov_audit(const TrajectoryLog& log) {
    AuditReport report;
    for (std::size_t n = 0; n < log.records.size(); ++n) {
        const auto& rec = log.records[n];
        const double realized_gap = rec.realized_cost - rec.value_function;
        report.worst_realized = std::max(report.worst_realized, realized_gap);
        if (realized_gap > AuditReport::kRealizedSlack)
            report.realized_violations.push_back(
                {rec.n, realized_gap - AuditReport::kRealizedSlack});
        if (n + 1 < log.records.size()) {
            const double decrease = log.records[n + 1].value_function -
                                    rec.value_function + rec.stage;
            report.worst_decrease = std::max(report.worst_decrease, decrease);
            if (decrease > AuditReport::kDecreaseSlack)
                report.decrease_violations.push_back(
                    {rec.n, decrease - AuditReport::kDecreaseSlack});
        }
    }
    report.pass = report.decrease_violations.empty() &&
                  report.realized_violations.empty();
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_trajectory_csv(std::ostream& os, const TrajectoryLog& log) {
    const int n = log.states.empty() ? 0 : static_cast<int>(log.states[0].size());
    const int m = log.records.empty() ? 1
                                      : static_cast<int>(log.records[0].input.size());
    os << "n";
    for (int i = 1; i <= n; ++i) os << ",x" << i;
    if (m == 1)
        os << ",u";
    else
        for (int i = 1; i <= m; ++i) os << ",u" << i;
    os << ",V,J_realized,stage_cost,branch,fallback,lambda,solver_iters,"
          "solve_status\n";
    for (std::size_t k = 0; k < log.records.size(); ++k) {
        const auto& rec = log.records[k];
        os << rec.n;
        for (int i = 0; i < n; ++i) os << ',' << fmt(log.states[k][i]);
        for (int i = 0; i < m; ++i) os << ',' << fmt(rec.input[i]);
        os << ',' << fmt(rec.value_function) << ',' << fmt(rec.realized_cost)
           << ',' << fmt(rec.stage) << ',' << to_string(rec.branch) << ','
           << (rec.fallback ? 1 : 0) << ',' << fmt(rec.lambda) << ','
           << rec.solver_iterations << ',' << to_string(rec.solve_status)
           << '\n';
    }
    // Trailing row carries the final state.
    if (log.states.size() == log.records.size() + 1 && !log.records.empty()) {
        std::vector<std::string> cells;
        cells.push_back(std::to_string(log.records.size()));
        for (int i = 0; i < n; ++i) cells.push_back(fmt(log.states.back()[i]));
        for (int i = 0; i < m + 7; ++i) cells.emplace_back();
        cells.emplace_back("final");
        for (std::size_t i = 0; i < cells.size(); ++i)
            os << (i ? "," : "") << cells[i];
        os << '\n';
    }
}

void write_trajectory_csv(const std::string& path, const TrajectoryLog& log) {
    std::ofstream os(path);
    if (!os) throw Error("write_trajectory_csv: cannot open " + path);
    write_trajectory_csv(os, log);
}

TrajectoryLog read_trajectory_csv(std::istream& is) {
    TrajectoryLog log;
    std::string line;
    if (!std::getline(is, line)) throw Error("read_trajectory_csv: empty file");
    int n = 0, m = 0;
    {
        std::stringstream header(line);
        std::string col;
        while (std::getline(header, col, ',')) {
            if (col.size() >= 2 && col[0] == 'x')
                n = std::max(n, std::stoi(col.substr(1)));
            if (col == "u") m = std::max(m, 1);
            if (col.size() >= 2 && col[0] == 'u' && std::isdigit(col[1]))
                m = std::max(m, std::stoi(col.substr(1)));
        }
    }
    auto parse_double = [](const std::string& s) {
        if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
        return std::stod(s);
    };
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        while (cells.size() < static_cast<std::size_t>(1 + n + m + 8))
            cells.push_back("");
        StateVector x(n);
        for (int i = 0; i < n; ++i) x[i] = parse_double(cells[1 + i]);
        if (cells[1 + n + m + 7] == "final") {
            log.states.push_back(x);
            continue;
        }
        StepRecord rec;
        rec.n = std::stoi(cells[0]);
        rec.input.resize(m);
        for (int i = 0; i < m; ++i) rec.input[i] = parse_double(cells[1 + n + i]);
        int c = 1 + n + m;
        rec.value_function = parse_double(cells[c++]);
        rec.realized_cost = parse_double(cells[c++]);
        rec.stage = parse_double(cells[c++]);
        rec.branch = cells[c++] == "local" ? WarmstartBranch::local
                                           : WarmstartBranch::shifted;
        rec.fallback = cells[c++] == "1";
        rec.lambda = parse_double(cells[c++]);
        rec.solver_iterations = cells[c].empty() ? 0 : std::stoi(cells[c]);
        ++c;
        const std::string status = cells[c++];
        if (status == "improved") rec.solve_status = SolveStatus::improved;
        else if (status == "converged") rec.solve_status = SolveStatus::converged;
        else if (status == "infeasible_start")
            rec.solve_status = SolveStatus::infeasible_start;
        else rec.solve_status = SolveStatus::unimproved;
        log.states.push_back(x);
        log.records.push_back(std::move(rec));
    }
    return log;
}

TrajectoryLog read_trajectory_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("read_trajectory_csv: cannot open " + path);
    return read_trajectory_csv(is);
}

std::string format_audit(const AuditReport& report, const TrajectoryLog& log) {
    std::ostringstream os;
    os << "lyapunov audit (" << to_string(log.mode) << ", " << log.records.size()
       << " steps): " << (report.pass ? "PASS" : "VIOLATIONS") << "\n";
    std::size_t fallbacks = 0, improvements = 0;
    for (const auto& rec : log.records) {
        if (rec.fallback) ++fallbacks;
        if (rec.solve_status == SolveStatus::improved) ++improvements;
    }
    os << "  fallback steps: " << fallbacks << "/" << log.records.size()
       << ", solver improvements: " << improvements << "\n";
    os << "  worst decrease slack: " << report.worst_decrease << " (allowed "
       << AuditReport::kDecreaseSlack << ")\n";
    os << "  worst realized-cost gap: " << report.worst_realized << " (allowed "
       << AuditReport::kRealizedSlack << ")\n";
    os << "  decrease violations: " << report.decrease_violations.size() << "\n";
    for (std::size_t i = 0; i < report.decrease_violations.size() && i < 10; ++i)
        os << "    n=" << report.decrease_violations[i].n << " amount "
           << report.decrease_violations[i].amount << "\n";
    os << "  realized-cost violations: " << report.realized_violations.size()
       << "\n";
    for (std::size_t i = 0; i < report.realized_violations.size() && i < 10; ++i)
        os << "    n=" << report.realized_violations[i].n << " amount "
           << report.realized_violations[i].amount << "\n";
    if (log.failed) os << "  run failed early: " << log.failure << "\n";
    return os.str();
}

}  // namespace mbmpc
