#include "mbmpc/ocp.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <memory>
#include <sstream>

namespace mbmpc {

namespace {

Matrix cholesky_factor_transposed(const Matrix& W, const char* name) {
    Eigen::LLT<Matrix> llt(W);
    if (llt.info() != Eigen::Success)
        throw ParameterError(std::string("assemble: weight not SPD: ") + name);
    return Matrix(llt.matrixL()).transpose();  // W = L L^T, returns L^T
}

/// Everything the NLP evaluators share. Captured by value in the closures so
/// an assembled problem is a self-contained immutable description.
struct ProblemData {
    ProblemData(const SystemModel& model_, const CostSpec& spec_,
                const ConstraintSet& cons_)
        : model(model_), spec(spec_), cons(cons_) {}

    SystemModel model;
    CostSpec spec;
    ConstraintSet cons;
    StateVector x0;
    BlockingPattern pattern;
    InputSequence warmstart;  // empty for plain blocked problems
    double eta = 0.0;
    bool offset = false;
    std::vector<SparseRow> offset_rows;  // offset problems only
    Matrix sqrt_state;                   // L^T with Q = L L^T
    Matrix sqrt_input;
    Matrix sqrt_terminal;
    int N = 0;
    int n = 0;
    int m = 0;
    int M = 0;
    int num_vars = 0;
    int lambda_col = -1;

    int node_col(int j) const { return j * n; }
    int block_col(int j) const { return (M + 1) * n + j * m; }

    NlpProblem::Evaluation evaluate(const Vector& v) const;
};

NlpProblem::Evaluation ProblemData::evaluate(const Vector& v) const {
    NlpProblem::Evaluation out;
    const int num_eq = (M + 1) * n;
    const int num_input_rows = offset ? 2 * static_cast<int>(offset_rows.size())
                                      : 2 * m * M;
    const int num_ineq = 2 * n * N + num_input_rows + 1;
    const int num_res = N * (n + m) + n + (offset ? 1 : 0);
    out.eq.resize(num_eq);
    out.ineq.resize(num_ineq);
    out.residuals.resize(num_res);

    const double lambda = offset ? v[lambda_col] : 0.0;
    std::vector<double> stage_terms;
    stage_terms.reserve(N + 2);

    out.eq.head(n) = v.segment(node_col(0), n) - x0;

    int k = 0;
    int ineq_row = 0;
    int res_row = 0;
    for (int j = 0; j < M; ++j) {
        StateVector x = v.segment(node_col(j), n);
        const InputVector ub = v.segment(block_col(j), m);
        for (int i = 0; i < pattern.block_lengths[j]; ++i, ++k) {
            InputVector u = ub;
            if (offset) u += lambda * warmstart[k];
            for (int c = 0; c < n; ++c) {
                out.ineq[ineq_row++] = x[c] - cons.state_box.upper[c];
                out.ineq[ineq_row++] = cons.state_box.lower[c] - x[c];
            }
            out.residuals.segment(res_row, n) = sqrt_state * x;
            res_row += n;
            out.residuals.segment(res_row, m) = sqrt_input * u;
            res_row += m;
            stage_terms.push_back(stage_cost(spec, x, u));
            x = model.transition(x, u);
        }
        out.eq.segment(n * (j + 1), n) = v.segment(node_col(j + 1), n) - x;
    }

    if (offset) {
        for (const auto& row : offset_rows) {
            double value = 0.0;
            for (const auto& [col, coeff] : row.terms) {
                const int vc = (col == M * m) ? lambda_col : (M + 1) * n + col;
                value += coeff * v[vc];
            }
            out.ineq[ineq_row++] = value - row.upper;
            out.ineq[ineq_row++] = row.lower - value;
        }
    } else {
        for (int j = 0; j < M; ++j) {
            for (int d = 0; d < m; ++d) {
                const double uv = v[block_col(j) + d];
                out.ineq[ineq_row++] = uv - cons.input_box.upper[d];
                out.ineq[ineq_row++] = cons.input_box.lower[d] - uv;
            }
        }
    }

    const StateVector terminal_node = v.segment(node_col(M), n);
    out.ineq[ineq_row++] = cons.terminal.value(terminal_node) - cons.terminal.level;

    out.residuals.segment(res_row, n) = sqrt_terminal * terminal_node;
    res_row += n;
    stage_terms.push_back(terminal_cost(spec, terminal_node));
    if (offset) {
        const double dl = lambda - 1.0;
        out.residuals[res_row++] = std::sqrt(eta) * dl;
        stage_terms.push_back(eta * (dl * dl));
    }
    out.objective = sum_backwards(stage_terms);
    return out;
}

void append_block(SparsityPattern& pattern, int row0, int rows, int col0,
                  int cols) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            pattern.push_back({row0 + r, col0 + c});
}

NlpProblem assemble(const SystemModel& model, const CostSpec& spec,
                    const ConstraintSet& cons, const StateVector& x0, int N,
                    const BlockingPattern& pattern,
                    const InputSequence* warmstart, double eta) {
    if (pattern.horizon != N)
        throw ParameterError("assemble: pattern horizon differs from N");
    if (x0.size() != model.state_dim)
        throw DimensionError("assemble: initial state dimension mismatch");
    const bool offset = warmstart != nullptr;
    if (offset && static_cast<int>(warmstart->size()) != N)
        throw DimensionError("assemble: warm-start length differs from N");

    auto data = std::make_shared<ProblemData>(model, spec, cons);
    data->x0 = x0;
    data->pattern = pattern;
    data->eta = eta;
    data->offset = offset;
    data->N = N;
    data->n = model.state_dim;
    data->m = model.input_dim;
    data->M = pattern.num_blocks();
    data->sqrt_state = cholesky_factor_transposed(spec.state_weight, "state");
    data->sqrt_input = cholesky_factor_transposed(spec.input_weight, "input");
    data->sqrt_terminal =
        cholesky_factor_transposed(spec.terminal_weight, "terminal");
    if (offset) {
        data->warmstart = *warmstart;
        data->offset_rows =
            offset_bound_rows(pattern, *warmstart, cons.input_box);
    }

    const int n = data->n;
    const int m = data->m;
    const int M = data->M;
    NlpProblem p;
    p.state_dim = n;
    p.input_dim = m;
    p.num_nodes = M + 1;
    p.num_blocks = M;
    p.has_lambda = offset;
    p.num_vars = (M + 1) * n + M * m + (offset ? 1 : 0);
    p.lambda_col = offset ? p.num_vars - 1 : -1;
    data->num_vars = p.num_vars;
    data->lambda_col = p.lambda_col;
    p.num_eq = (M + 1) * n;
    p.num_ineq = 2 * n * N +
                 (offset ? 2 * static_cast<int>(data->offset_rows.size())
                         : 2 * m * M) +
                 1;
    p.num_residuals = N * (n + m) + n + (offset ? 1 : 0);

    // Per-block flag: does lambda enter this block's dynamics at all?
    std::vector<bool> block_has_w(M, false);
    if (offset) {
        int k = 0;
        for (int j = 0; j < M; ++j)
            for (int i = 0; i < pattern.block_lengths[j]; ++i, ++k)
                if ((*warmstart)[k].cwiseAbs().maxCoeff() != 0.0)
                    block_has_w[j] = true;
    }

    // Equality sparsity: pin is diagonal in node 0; defect j couples node j,
    // block j, node j+1 and (offset, nonzero warm-start) lambda.
    for (int c = 0; c < n; ++c) p.eq_sparsity.push_back({c, p.node_col(0) + c});
    for (int j = 0; j < M; ++j) {
        const int row0 = n * (j + 1);
        append_block(p.eq_sparsity, row0, n, p.node_col(j), n);
        append_block(p.eq_sparsity, row0, n, p.block_col(j), m);
        for (int c = 0; c < n; ++c)
            p.eq_sparsity.push_back({row0 + c, p.node_col(j + 1) + c});
        if (offset && block_has_w[j])
            append_block(p.eq_sparsity, row0, n, p.lambda_col, 1);
    }

    // Inequality sparsity, in evaluator row order.
    int row = 0;
    for (int j = 0; j < M; ++j) {
        for (int i = 0; i < pattern.block_lengths[j]; ++i) {
            if (i == 0) {
                for (int c = 0; c < n; ++c) {
                    p.ineq_sparsity.push_back({row++, p.node_col(j) + c});
                    p.ineq_sparsity.push_back({row++, p.node_col(j) + c});
                }
            } else {
                for (int c = 0; c < n; ++c) {
                    for (int side = 0; side < 2; ++side) {
                        append_block(p.ineq_sparsity, row, 1, p.node_col(j), n);
                        append_block(p.ineq_sparsity, row, 1, p.block_col(j), m);
                        if (offset && block_has_w[j])
                            p.ineq_sparsity.push_back({row, p.lambda_col});
                        ++row;
                    }
                }
            }
        }
    }
    if (offset) {
        for (const auto& srow : data->offset_rows) {
            for (int side = 0; side < 2; ++side) {
                for (const auto& term : srow.terms) {
                    const int vc =
                        (term.first == M * m) ? p.lambda_col : (M + 1) * n + term.first;
                    p.ineq_sparsity.push_back({row, vc});
                }
                ++row;
            }
        }
    } else {
        for (int j = 0; j < M; ++j)
            for (int d = 0; d < m; ++d) {
                p.ineq_sparsity.push_back({row++, p.block_col(j) + d});
                p.ineq_sparsity.push_back({row++, p.block_col(j) + d});
            }
    }
    append_block(p.ineq_sparsity, row, 1, p.node_col(M), n);  // terminal level
    ++row;

    // Residual sparsity in evaluator row order: per step state rows then
    // input rows, then terminal rows, then the regularizer.
    int rrow = 0;
    for (int j = 0; j < M; ++j) {
        for (int i = 0; i < pattern.block_lengths[j]; ++i) {
            append_block(p.residual_sparsity, rrow, n, p.node_col(j), n);
            if (i > 0) {
                append_block(p.residual_sparsity, rrow, n, p.block_col(j), m);
                if (offset && block_has_w[j])
                    append_block(p.residual_sparsity, rrow, n, p.lambda_col, 1);
            }
            rrow += n;
            append_block(p.residual_sparsity, rrow, m, p.block_col(j), m);
            if (offset && block_has_w[j])
                append_block(p.residual_sparsity, rrow, m, p.lambda_col, 1);
            rrow += m;
        }
    }
    append_block(p.residual_sparsity, rrow, n, p.node_col(M), n);
    rrow += n;
    if (offset) append_block(p.residual_sparsity, rrow++, 1, p.lambda_col, 1);

    p.evaluate = [data](const Vector& v) { return data->evaluate(v); };
    p.objective = [data](const Vector& v) { return data->evaluate(v).objective; };
    p.equality = [data](const Vector& v) { return data->evaluate(v).eq; };
    p.inequality = [data](const Vector& v) { return data->evaluate(v).ineq; };
    p.residuals = [data](const Vector& v) { return data->evaluate(v).residuals; };
    return p;
}

}  // namespace

ConstraintSet::ConstraintSet(Box state, Box input, TerminalSet term)
    : state_box(std::move(state)),
      input_box(std::move(input)),
      terminal(std::move(term)) {
    if (!input_box.lower.allFinite() || !input_box.upper.allFinite())
        throw ParameterError("ConstraintSet: input box must be compact");
    if (!state_box.contains(Vector::Zero(state_box.dim())) ||
        !input_box.contains(Vector::Zero(input_box.dim())))
        throw ParameterError("ConstraintSet: origin must be admissible");
    if (terminal.level <= 0.0)
        throw ParameterError("ConstraintSet: terminal level must be positive");
}

ConstraintSet benchmark_constraints(const TerminalIngredients& ing) {
    return ConstraintSet(Box::symmetric(2, 1.0), Box::symmetric(1, 1.0),
                         terminal_set(ing));
}

AdmissibilityReport evaluate_admissibility(const SystemModel& model,
                                           const ConstraintSet& cons,
                                           const StateVector& x0,
                                           const InputSequence& useq) {
    AdmissibilityReport report;
    const auto traj = rollout(model, x0, useq);
    const int N = traj.horizon();
    for (int k = 0; k < N; ++k) {
        report.state_violation = std::max(report.state_violation,
                                          cons.state_box.violation(traj.states[k]));
        report.input_violation = std::max(report.input_violation,
                                          cons.input_box.violation(traj.inputs[k]));
    }
    report.terminal_margin =
        cons.terminal.value(traj.states[N]) - cons.terminal.level;
    report.feasible = report.state_violation <= AdmissibilityReport::kFeasTol &&
                      report.input_violation <= AdmissibilityReport::kFeasTol &&
                      report.terminal_margin <= AdmissibilityReport::kFeasTol;
    return report;
}

NlpProblem assemble_blocked(const SystemModel& model, const CostSpec& spec,
                            const ConstraintSet& cons, const StateVector& x0,
                            int N, const BlockingPattern& pattern) {
    return assemble(model, spec, cons, x0, N, pattern, nullptr, 0.0);
}

NlpProblem assemble_offset(const SystemModel& model, const CostSpec& spec,
                           const ConstraintSet& cons, const StateVector& x0,
                           int N, const BlockingPattern& pattern,
                           const InputSequence& warmstart, double eta) {
    if (eta < 0.0) throw ParameterError("assemble_offset: eta must be >= 0");
    return assemble(model, spec, cons, x0, N, pattern, &warmstart, eta);
}

SparsityPattern jacobian_sparsity(const NlpProblem& problem) {
    SparsityPattern combined = problem.eq_sparsity;
    combined.reserve(combined.size() + problem.ineq_sparsity.size());
    for (const auto& e : problem.ineq_sparsity)
        combined.push_back({e.row + problem.num_eq, e.col});
    return combined;
}

std::string describe(const NlpProblem& problem) {
    std::ostringstream os;
    os << "nlp: " << problem.num_vars << " variables (" << problem.num_nodes
       << " nodes x " << problem.state_dim << ", " << problem.num_blocks
       << " blocks x " << problem.input_dim
       << (problem.has_lambda ? ", lambda)" : ")") << ", " << problem.num_eq
       << " equalities, " << problem.num_ineq << " inequalities, jacobian nnz "
       << problem.eq_sparsity.size() + problem.ineq_sparsity.size();
    return os.str();
}

BruteForceResult brute_force_solve(const SystemModel& model, const CostSpec& spec,
                                   const ConstraintSet& cons, const StateVector& x0,
                                   int N, const BlockingPattern& pattern,
                                   int grid_points_per_dim) {
    const int m = model.input_dim;
    const int M = pattern.num_blocks();
    const int dims = m * M;
    if (dims > 4 || grid_points_per_dim > 21 || grid_points_per_dim < 2)
        throw TractabilityError("brute_force_solve: guard violated");
    if (pattern.horizon != N)
        throw ParameterError("brute_force_solve: pattern horizon differs from N");

    long total = 1;
    for (int d = 0; d < dims; ++d) total *= grid_points_per_dim;

    auto grid_value = [&](int dim, int idx) {
        const int coord = dim % m;
        const double lo = cons.input_box.lower[coord];
        const double hi = cons.input_box.upper[coord];
        return lo + (hi - lo) * idx / (grid_points_per_dim - 1);
    };

    std::vector<double> cost(total, std::numeric_limits<double>::infinity());
    BruteForceResult result;
    result.best_cost = std::numeric_limits<double>::infinity();

    std::vector<int> idx(dims, 0);
    for (long combo = 0; combo < total; ++combo) {
        long rem = combo;
        for (int d = 0; d < dims; ++d) {
            idx[d] = static_cast<int>(rem % grid_points_per_dim);
            rem /= grid_points_per_dim;
        }
        BlockedSequence blocked;
        blocked.entries.resize(M, Vector::Zero(m));
        for (int d = 0; d < dims; ++d)
            blocked.entries[d / m][d % m] = grid_value(d, idx[d]);
        const InputSequence full = expand(pattern, blocked);
        try {
            const auto report = evaluate_admissibility(model, cons, x0, full);
            if (!report.feasible) continue;
            const double J = total_cost(model, spec, x0, full);
            cost[combo] = J;
            if (J < result.best_cost) {
                result.best_cost = J;
                result.best = blocked;
                result.feasible = true;
            }
        } catch (const RolloutOverflow&) {
            continue;
        }
    }

    if (result.feasible) {
        // Largest cost jump between adjacent admissible grid points.
        long stride = 1;
        for (int d = 0; d < dims; ++d) {
            for (long combo = 0; combo < total; ++combo) {
                const long neighbor = combo + stride;
                if (neighbor >= total) continue;
                if ((combo / stride) % grid_points_per_dim ==
                    static_cast<long>(grid_points_per_dim - 1))
                    continue;
                if (std::isfinite(cost[combo]) && std::isfinite(cost[neighbor]))
                    result.cell_bound = std::max(
                        result.cell_bound, std::abs(cost[combo] - cost[neighbor]));
            }
            stride *= grid_points_per_dim;
        }
    }
    return result;
}

Vector consistent_initial_point(const NlpProblem& problem, const SystemModel& model,
                                const StateVector& x0, const BlockingPattern& pattern,
                                const BlockedSequence& blocked,
                                const InputSequence* warmstart, double lambda) {
    const int n = problem.state_dim;
    const int m = problem.input_dim;
    const int M = problem.num_blocks;
    if (blocked.num_blocks() != M)
        throw DimensionError("consistent_initial_point: block count mismatch");
    Vector v = Vector::Zero(problem.num_vars);
    InputSequence full = (warmstart != nullptr)
                             ? expand_offset(pattern, blocked, *warmstart, lambda)
                             : expand(pattern, blocked);
    const auto traj = rollout(model, x0, full);
    for (int j = 0; j <= M; ++j) {
        const int k = (j == M) ? pattern.horizon : pattern.block_start(j);
        v.segment(problem.node_col(j), n) = traj.states[k];
    }
    for (int j = 0; j < M; ++j)
        v.segment(problem.block_col(j), m) = blocked.entries[j];
    if (problem.has_lambda) v[problem.lambda_col] = lambda;
    return v;
}

}  // namespace mbmpc
