#include "mbmpc/nlp_solver.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace mbmpc {

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::improved: return "improved";
        case SolveStatus::unimproved: return "unimproved";
        case SolveStatus::infeasible_start: return "infeasible_start";
        case SolveStatus::converged: return "converged";
    }
    return "unknown";
}

namespace detail {

std::vector<std::vector<int>> color_columns(const SparsityPattern& pattern,
                                            int num_cols) {
    std::vector<std::vector<int>> col_rows(num_cols);
    for (const auto& e : pattern) col_rows[e.col].push_back(e.row);

    std::vector<std::vector<int>> groups;
    std::vector<std::vector<bool>> used_rows;  // per-group row bitmap
    int num_rows = 0;
    for (const auto& e : pattern) num_rows = std::max(num_rows, e.row + 1);

    for (int c = 0; c < num_cols; ++c) {
        bool placed = false;
        for (std::size_t g = 0; g < groups.size() && !placed; ++g) {
            bool clash = false;
            for (int r : col_rows[c])
                if (used_rows[g][r]) {
                    clash = true;
                    break;
                }
            if (!clash) {
                groups[g].push_back(c);
                for (int r : col_rows[c]) used_rows[g][r] = true;
                placed = true;
            }
        }
        if (!placed) {
            groups.emplace_back(1, c);
            used_rows.emplace_back(num_rows, false);
            for (int r : col_rows[c]) used_rows.back()[r] = true;
        }
    }
    return groups;
}

Matrix colored_jacobian(const std::function<Vector(const Vector&)>& fn,
                        const Vector& v, int num_rows,
                        const SparsityPattern& pattern,
                        const std::vector<std::vector<int>>& groups) {
    const int num_cols = static_cast<int>(v.size());
    Matrix J = Matrix::Zero(num_rows, num_cols);
    std::vector<std::vector<int>> col_rows(num_cols);
    for (const auto& e : pattern) col_rows[e.col].push_back(e.row);

    Vector vp = v, vm = v;
    for (const auto& group : groups) {
        std::vector<double> h(group.size());
        for (std::size_t i = 0; i < group.size(); ++i) {
            const int c = group[i];
            h[i] = std::max(1e-6, 1e-6 * std::abs(v[c]));
            vp[c] = v[c] + h[i];
            vm[c] = v[c] - h[i];
        }
        const Vector fp = fn(vp);
        const Vector fm = fn(vm);
        for (std::size_t i = 0; i < group.size(); ++i) {
            const int c = group[i];
            for (int r : col_rows[c]) J(r, c) = (fp[r] - fm[r]) / (2.0 * h[i]);
            vp[c] = v[c];
            vm[c] = v[c];
        }
    }
    return J;
}

namespace {

constexpr double kQpTol = 1e-10;

}  // namespace

QpResult solve_qp(const Matrix& H, const Vector& g, const Matrix& Aeq,
                  const Vector& beq, const Matrix& Ain, const Vector& bin,
                  std::vector<int>& working_set) {
    const int p = static_cast<int>(Aeq.rows());
    const int q = static_cast<int>(Ain.rows());
    QpResult result;
    result.eq_multipliers = Vector::Zero(p);
    result.ineq_multipliers = Vector::Zero(q);

    Eigen::LLT<Matrix> llt(H);
    if (llt.info() != Eigen::Success) return result;

    const Vector d_un = -llt.solve(g);

    // Per-row solves tau_r = H^{-1} a_r' are cached; the Schur complement of
    // the active set is assembled from them incrementally.
    Matrix tau_eq;
    if (p > 0) tau_eq = llt.solve(Aeq.transpose());  // nv x p
    std::vector<Vector> tau_in(q);
    std::vector<bool> tau_ready(q, false);
    auto tau_of = [&](int r) -> const Vector& {
        if (!tau_ready[r]) {
            tau_in[r] = llt.solve(Ain.row(r).transpose());
            tau_ready[r] = true;
        }
        return tau_in[r];
    };

    Vector rhs_eq(p), rhs_in(q);
    if (p > 0) rhs_eq = Aeq * d_un + beq;
    if (q > 0) rhs_in = Ain * d_un + bin;

    std::vector<int> active;  // inequality rows currently held active
    std::vector<bool> banned(q, false);

    Matrix S(p, p);
    if (p > 0) S = Aeq * tau_eq;

    auto grow_S = [&](int r) {
        const int k = static_cast<int>(S.rows());
        S.conservativeResize(k + 1, k + 1);
        const Vector& tr = tau_of(r);
        for (int i = 0; i < p; ++i) S(k, i) = S(i, k) = Aeq.row(i).dot(tr);
        for (std::size_t i = 0; i < active.size(); ++i) {
            const double val = Ain.row(active[i]).dot(tr);
            S(k, p + i) = S(p + i, k) = val;
        }
        S(k, k) = Ain.row(r).dot(tr);
    };
    auto shrink_S = [&](int pos) {  // pos within active
        const int k = static_cast<int>(S.rows());
        const int at = p + pos;
        for (int i = at; i + 1 < k; ++i) {
            S.row(i) = S.row(i + 1);
            S.col(i) = S.col(i + 1);
        }
        S.conservativeResize(k - 1, k - 1);
    };

    // Re-validate the warm-started working set row by row.
    {
        const std::vector<int> hint = working_set;
        working_set.clear();
        for (int r : hint) {
            if (r < 0 || r >= q) continue;
            if (std::find(active.begin(), active.end(), r) != active.end())
                continue;
            active.push_back(r);
            grow_S(r);
            if (Eigen::LLT<Matrix>(S).info() != Eigen::Success) {
                shrink_S(static_cast<int>(active.size()) - 1);
                active.pop_back();
            }
        }
    }

    Vector d = d_un;
    Vector y;
    const int max_pivots = 100 + 3 * q;
    int last_added = -1;
    for (int pivot = 0; pivot < max_pivots; ++pivot) {
        const int k = static_cast<int>(S.rows());
        if (k == 0) {
            d = d_un;
            y.resize(0);
        } else {
            Eigen::LLT<Matrix> sllt(S);
            if (sllt.info() != Eigen::Success) {
                if (last_added >= 0) {
                    auto it = std::find(active.begin(), active.end(), last_added);
                    if (it != active.end()) {
                        shrink_S(static_cast<int>(it - active.begin()));
                        active.erase(it);
                    }
                    banned[last_added] = true;
                    last_added = -1;
                    continue;
                }
                working_set = active;
                return result;  // equality block itself is rank deficient
            }
            Vector rhs(k);
            rhs.head(p) = rhs_eq;
            for (std::size_t i = 0; i < active.size(); ++i)
                rhs[p + i] = rhs_in[active[i]];
            y = sllt.solve(rhs);
            d = d_un;
            if (p > 0) d -= tau_eq * y.head(p);
            for (std::size_t i = 0; i < active.size(); ++i)
                d -= y[p + i] * tau_of(active[i]);
        }

        // Most violated inactive inequality.
        int worst = -1;
        double worst_violation = kQpTol;
        for (int r = 0; r < q; ++r) {
            if (banned[r]) continue;
            if (std::find(active.begin(), active.end(), r) != active.end())
                continue;
            const double viol = Ain.row(r).dot(d) + bin[r];
            if (viol > worst_violation) {
                worst_violation = viol;
                worst = r;
            }
        }
        if (worst >= 0) {
            active.push_back(worst);
            grow_S(worst);
            last_added = worst;
            continue;
        }

        // Most negative working multiplier.
        int drop = -1;
        double most_negative = -kQpTol;
        for (std::size_t i = 0; i < active.size(); ++i) {
            const double mu = y[p + i];
            if (mu < most_negative) {
                most_negative = mu;
                drop = static_cast<int>(i);
            }
        }
        if (drop >= 0) {
            shrink_S(drop);
            active.erase(active.begin() + drop);
            last_added = -1;
            continue;
        }

        result.step = d;
        if (p > 0) result.eq_multipliers = y.head(p);
        for (std::size_t i = 0; i < active.size(); ++i)
            result.ineq_multipliers[active[i]] = y[p + i];
        result.success = true;
        working_set = active;
        return result;
    }
    working_set = active;
    return result;
}

}  // namespace detail

namespace {

double ineq_violation(const Vector& ineq) {
    double v = 0.0;
    for (int i = 0; i < ineq.size(); ++i) v = std::max(v, ineq[i]);
    return v;
}

double eq_violation(const Vector& eq) {
    return eq.size() == 0 ? 0.0 : eq.cwiseAbs().maxCoeff();
}

double l1_infeasibility(const NlpProblem::Evaluation& e) {
    double acc = 0.0;
    for (int i = 0; i < e.eq.size(); ++i) acc += std::abs(e.eq[i]);
    for (int i = 0; i < e.ineq.size(); ++i) acc += std::max(0.0, e.ineq[i]);
    return acc;
}

double squared_infeasibility(const NlpProblem::Evaluation& e) {
    double acc = 0.0;
    for (int i = 0; i < e.eq.size(); ++i) acc += e.eq[i] * e.eq[i];
    for (int i = 0; i < e.ineq.size(); ++i) {
        const double r = std::max(0.0, e.ineq[i]);
        acc += r * r;
    }
    return acc;
}

bool is_finite(const NlpProblem::Evaluation& e) {
    return std::isfinite(e.objective) && e.eq.allFinite() && e.ineq.allFinite() &&
           e.residuals.allFinite();
}

SparsityPattern combined_pattern(const NlpProblem& p, bool with_residuals) {
    SparsityPattern combined = p.eq_sparsity;
    for (const auto& e : p.ineq_sparsity)
        combined.push_back({e.row + p.num_eq, e.col});
    if (with_residuals)
        for (const auto& e : p.residual_sparsity)
            combined.push_back({e.row + p.num_eq + p.num_ineq, e.col});
    return combined;
}

/// Direction reducing the linearized squared infeasibility:
///   min ||Jeq d + ceq||^2 + ||t||^2 + mu ||d||^2
///   s.t. Jin_e d + cin_e <= t, t >= 0 for near-violated rows e,
///        Jin_h d + cin_h <= 0 for the remaining rows.
/// Elastic slacks keep the subproblem feasible where the current iterate is
/// not; hard rows stop satisfied constraints from degrading.
bool restoration_direction(const Matrix& Jeq, const Vector& ceq,
                           const Matrix& Jin, const Vector& cin, double mu,
                           Vector& direction) {
    const int nv = static_cast<int>(Jeq.cols());
    const int q = static_cast<int>(cin.size());
    std::vector<int> elastic, hard;
    for (int r = 0; r < q; ++r) {
        if (cin[r] > -1e-9)
            elastic.push_back(r);
        else
            hard.push_back(r);
    }
    const int ne = static_cast<int>(elastic.size());
    const int nz = nv + ne;

    Matrix H = Matrix::Zero(nz, nz);
    H.topLeftCorner(nv, nv) = 2.0 * Jeq.transpose() * Jeq;
    H.topLeftCorner(nv, nv).diagonal().array() += mu;
    for (int i = 0; i < ne; ++i) H(nv + i, nv + i) = 2.0;
    Vector g = Vector::Zero(nz);
    g.head(nv) = 2.0 * Jeq.transpose() * ceq;

    const int rows = 2 * ne + static_cast<int>(hard.size());
    Matrix A = Matrix::Zero(rows, nz);
    Vector b = Vector::Zero(rows);
    int row = 0;
    for (int i = 0; i < ne; ++i) {
        A.row(row).head(nv) = Jin.row(elastic[i]);
        A(row, nv + i) = -1.0;
        b[row] = cin[elastic[i]];
        ++row;
    }
    for (int i = 0; i < ne; ++i) {
        A(row, nv + i) = -1.0;
        b[row] = 0.0;
        ++row;
    }
    for (int r : hard) {
        A.row(row).head(nv) = Jin.row(r);
        b[row] = cin[r];
        ++row;
    }

    std::vector<int> ws;
    const auto qp = detail::solve_qp(H, g, Matrix(0, nz), Vector(0), A, b, ws);
    if (!qp.success) return false;
    direction = qp.step.head(nv);
    return direction.allFinite();
}

struct BestTracker {
    Vector point;
    double objective = std::numeric_limits<double>::infinity();
    double violation = std::numeric_limits<double>::infinity();
    bool any = false;

    void offer(const Vector& v, const NlpProblem::Evaluation& e,
               const SolverConfig& cfg, double reference) {
        const double ev = eq_violation(e.eq);
        const double iv = ineq_violation(e.ineq);
        if (ev > cfg.eps_feas_eq || iv > cfg.eps_feas) return;
        if (!(e.objective <= reference)) return;
        // Keep the incumbent on ties.
        if (!any || e.objective < objective - 1e-12) {
            point = v;
            objective = e.objective;
            violation = std::max(ev, iv);
            any = true;
        }
    }
};

}  // namespace

SolveOutcome solve(const NlpProblem& problem, const Vector& initial_point,
                   double reference_objective, const SolverConfig& config) {
    if (initial_point.size() != problem.num_vars)
        throw DimensionError("solve: initial point does not match problem layout");

    SolveOutcome outcome;
    Vector v = initial_point;
    NlpProblem::Evaluation eval = problem.evaluate(v);
    if (!is_finite(eval))
        throw EvaluationError("solve: non-finite evaluation at the initial point");

    const double initial_eq = eq_violation(eval.eq);
    const double initial_in = ineq_violation(eval.ineq);

    BestTracker best;
    best.offer(v, eval, config, reference_objective);

    const SparsityPattern pattern = combined_pattern(problem, true);
    const auto groups = detail::color_columns(pattern, problem.num_vars);
    auto combined_fn = [&problem](const Vector& x) {
        const auto e = problem.evaluate(x);
        Vector out(e.eq.size() + e.ineq.size() + e.residuals.size());
        out << e.eq, e.ineq, e.residuals;
        return out;
    };
    const int total_rows = problem.num_eq + problem.num_ineq + problem.num_residuals;

    double sigma = config.merit_penalty;
    bool stationary = false;
    std::vector<int> working_set;

    auto log_point = [&](int it, double alpha) {
        if (!config.log_iterates) return;
        IterateRecord rec;
        rec.iteration = it;
        rec.objective = eval.objective;
        rec.eq_violation = eq_violation(eval.eq);
        rec.ineq_violation = ineq_violation(eval.ineq);
        rec.penalty = sigma;
        rec.merit = eval.objective + sigma * l1_infeasibility(eval);
        rec.step_size = alpha;
        outcome.log.push_back(rec);
    };
    log_point(0, 0.0);

    for (int it = 1; it <= config.max_iterations; ++it) {
        const Matrix J =
            detail::colored_jacobian(combined_fn, v, total_rows, pattern, groups);
        const Matrix Jeq = J.topRows(problem.num_eq);
        const Matrix Jin = J.middleRows(problem.num_eq, problem.num_ineq);
        const Matrix Jr = J.bottomRows(problem.num_residuals);

        const Vector grad = 2.0 * Jr.transpose() * eval.residuals;
        Matrix H = 2.0 * Jr.transpose() * Jr;
        const double reg = 1e-8 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
        H.diagonal().array() += reg;

        // Active rows at the current point seed the working set.
        for (int r = 0; r < problem.num_ineq; ++r)
            if (std::abs(eval.ineq[r]) <= 1e-9 &&
                std::find(working_set.begin(), working_set.end(), r) ==
                    working_set.end())
                working_set.push_back(r);

        Vector d;
        bool have_direction = false;
        auto qp = detail::solve_qp(H, grad, Jeq, eval.eq, Jin, eval.ineq,
                                   working_set);
        if (qp.success) {
            d = qp.step;
            have_direction = true;
            double mult_norm = 0.0;
            if (qp.eq_multipliers.size() > 0)
                mult_norm = qp.eq_multipliers.cwiseAbs().maxCoeff();
            if (qp.ineq_multipliers.size() > 0)
                mult_norm =
                    std::max(mult_norm, qp.ineq_multipliers.cwiseAbs().maxCoeff());
            sigma = std::max(sigma, 1.1 * mult_norm + 1e-3);
        }

        const double current_infeas = l1_infeasibility(eval);
        if (!have_direction) {
            // Inconsistent linearization: fall back to a restoration step.
            if (current_infeas <= 1e-14 ||
                !restoration_direction(Jeq, eval.eq, Jin, eval.ineq,
                                       1e-8 * (1.0 + grad.cwiseAbs().maxCoeff()),
                                       d)) {
                stationary = current_infeas <= 1e-14;
                break;
            }
        }

        const double step_norm = d.size() == 0 ? 0.0 : d.cwiseAbs().maxCoeff();
        if (step_norm <= config.eps_opt) {
            stationary = true;
            break;
        }

        // Predicted l1 infeasibility after the full linear step.
        double lin_infeas = 0.0;
        {
            const Vector le = Jeq * d + eval.eq;
            const Vector li = Jin * d + eval.ineq;
            for (int i = 0; i < le.size(); ++i) lin_infeas += std::abs(le[i]);
            for (int i = 0; i < li.size(); ++i)
                lin_infeas += std::max(0.0, li[i]);
        }
        const double infeas_drop = current_infeas - lin_infeas;
        double directional = grad.dot(d) - sigma * infeas_drop;
        int growth = 0;
        while (directional >= -1e-16 * std::max(1.0, std::abs(eval.objective)) &&
               infeas_drop > 1e-16 && growth < 20) {
            sigma *= 10.0;
            directional = grad.dot(d) - sigma * infeas_drop;
            ++growth;
        }
        if (directional >= -1e-16 * std::max(1.0, std::abs(eval.objective))) {
            stationary = true;
            break;
        }

        const double merit = eval.objective + sigma * current_infeas;
        double alpha = 1.0;
        bool accepted = false;
        while (alpha >= config.min_step) {
            const Vector v_try = v + alpha * d;
            const auto eval_try = problem.evaluate(v_try);
            if (is_finite(eval_try)) {
                const double merit_try =
                    eval_try.objective + sigma * l1_infeasibility(eval_try);
                if (merit_try <= merit + 1e-4 * alpha * directional) {
                    v = v_try;
                    eval = eval_try;
                    accepted = true;
                    break;
                }
            }
            alpha *= config.backtrack;
        }
        if (!accepted) {
            stationary = true;
            break;
        }

        best.offer(v, eval, config, reference_objective);
        outcome.iterations_used = it;
        log_point(it, alpha);
    }

    if (best.any) {
        outcome.best_point = best.point;
        outcome.best_objective = best.objective;
        outcome.max_violation = best.violation;
    } else {
        outcome.best_point = initial_point;
        outcome.best_objective = problem.evaluate(initial_point).objective;
        outcome.max_violation = std::max(initial_eq, initial_in);
    }

    const bool strictly_better =
        best.any && (std::isinf(reference_objective) ||
                     best.objective <= reference_objective - 1e-12);
    if (strictly_better) {
        outcome.status = SolveStatus::improved;
    } else if (best.any && stationary) {
        outcome.status = SolveStatus::converged;
    } else if (best.any) {
        outcome.status = SolveStatus::unimproved;
    } else if (initial_eq > config.eps_feas_eq || initial_in > config.eps_feas) {
        outcome.status = SolveStatus::infeasible_start;
    } else {
        outcome.status = SolveStatus::unimproved;
    }
    return outcome;
}

SolveOutcome solve_feasibility(const NlpProblem& problem,
                               const Vector& initial_point,
                               const SolverConfig& config) {
    if (initial_point.size() != problem.num_vars)
        throw DimensionError(
            "solve_feasibility: initial point does not match problem layout");

    SolveOutcome outcome;
    Vector v = initial_point;
    auto eval = problem.evaluate(v);
    if (!is_finite(eval))
        throw EvaluationError(
            "solve_feasibility: non-finite evaluation at the initial point");

    auto violation_of = [&](const NlpProblem::Evaluation& e) {
        return std::max(eq_violation(e.eq), ineq_violation(e.ineq));
    };
    auto feasible = [&](const NlpProblem::Evaluation& e) {
        return eq_violation(e.eq) <= config.eps_feas_eq &&
               ineq_violation(e.ineq) <= config.eps_feas;
    };

    outcome.best_point = v;
    outcome.best_objective = eval.objective;
    outcome.max_violation = violation_of(eval);

    if (feasible(eval)) {
        outcome.status = SolveStatus::converged;
        return outcome;
    }

    const SparsityPattern pattern = combined_pattern(problem, false);
    const auto groups = detail::color_columns(pattern, problem.num_vars);
    auto constraint_fn = [&problem](const Vector& x) {
        const auto e = problem.evaluate(x);
        Vector out(e.eq.size() + e.ineq.size());
        out << e.eq, e.ineq;
        return out;
    };
    const int rows = problem.num_eq + problem.num_ineq;

    // Stall guard: bail out when the violation stops improving meaningfully.
    double stall_reference = outcome.max_violation;
    int stalled_iterations = 0;

    for (int it = 1; it <= config.max_iterations; ++it) {
        const Matrix J =
            detail::colored_jacobian(constraint_fn, v, rows, pattern, groups);
        const Matrix Jeq = J.topRows(problem.num_eq);
        const Matrix Jin = J.bottomRows(problem.num_ineq);

        Vector d;
        if (!restoration_direction(Jeq, eval.eq, Jin, eval.ineq, 1e-10, d)) break;
        if (d.cwiseAbs().maxCoeff() <= 1e-14) break;

        const double ssq = squared_infeasibility(eval);
        // Directional derivative of the squared infeasibility.
        double descent = 2.0 * (Jeq * d).dot(eval.eq);
        for (int i = 0; i < eval.ineq.size(); ++i)
            if (eval.ineq[i] > 0.0) descent += 2.0 * eval.ineq[i] * Jin.row(i).dot(d);
        if (descent >= 0.0) break;

        double alpha = 1.0;
        bool accepted = false;
        while (alpha >= config.min_step) {
            const Vector v_try = v + alpha * d;
            const auto eval_try = problem.evaluate(v_try);
            if (is_finite(eval_try) &&
                squared_infeasibility(eval_try) <= ssq + 1e-4 * alpha * descent) {
                v = v_try;
                eval = eval_try;
                accepted = true;
                break;
            }
            alpha *= config.backtrack;
        }
        if (!accepted) break;

        outcome.iterations_used = it;
        if (violation_of(eval) < outcome.max_violation) {
            outcome.best_point = v;
            outcome.best_objective = eval.objective;
            outcome.max_violation = violation_of(eval);
        }
        if (feasible(eval)) {
            outcome.best_point = v;
            outcome.best_objective = eval.objective;
            outcome.max_violation = violation_of(eval);
            outcome.status = SolveStatus::converged;
            return outcome;
        }
        if (++stalled_iterations >= 25) {
            if (outcome.max_violation > 0.9 * stall_reference) break;
            stall_reference = outcome.max_violation;
            stalled_iterations = 0;
        }
    }

    outcome.status = SolveStatus::infeasible_start;
    return outcome;
}

}  // namespace mbmpc
