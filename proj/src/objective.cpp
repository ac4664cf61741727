#include "mbmpc/objective.hpp"

#include <Eigen/Eigenvalues>

namespace mbmpc {

namespace {

constexpr double kEigenvalueTol = 1e-12;

double min_eigenvalue_symmetric(const Matrix& M) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

void require_spd(const Matrix& M, int dim, const char* name) {
    if (M.rows() != dim || M.cols() != dim)
        throw DimensionError(std::string("CostSpec: ") + name + " has wrong shape");
    if (!M.isApprox(M.transpose(), 1e-10))
        throw ParameterError(std::string("CostSpec: ") + name + " is not symmetric");
    if (min_eigenvalue_symmetric(M) <= kEigenvalueTol)
        throw ParameterError(std::string("CostSpec: ") + name +
                             " is not positive definite");
}

}  // namespace

CostSpec::CostSpec(Matrix Q, Matrix R, Matrix P)
    : state_weight(std::move(Q)),
      input_weight(std::move(R)),
      terminal_weight(std::move(P)) {
    const int n = static_cast<int>(state_weight.rows());
    const int m = static_cast<int>(input_weight.rows());
    require_spd(state_weight, n, "state weight");
    require_spd(input_weight, m, "input weight");
    require_spd(terminal_weight, n, "terminal weight");
}

CostSpec CostSpec::scalar_input(Matrix Q, double r, Matrix P) {
    Matrix R(1, 1);
    R(0, 0) = r;
    return CostSpec(std::move(Q), std::move(R), std::move(P));
}

double stage_cost(const CostSpec& spec, const StateVector& x,
                  const InputVector& u) {
    if (x.size() != spec.state_weight.rows() || u.size() != spec.input_weight.rows())
        throw DimensionError("stage_cost: dimension mismatch");
    return x.dot(spec.state_weight * x) + u.dot(spec.input_weight * u);
}

double terminal_cost(const CostSpec& spec, const StateVector& xN) {
    if (xN.size() != spec.terminal_weight.rows())
        throw DimensionError("terminal_cost: dimension mismatch");
    return xN.dot(spec.terminal_weight * xN);
}

double total_cost(const SystemModel& model, const CostSpec& spec,
                  const StateVector& x0, const InputSequence& useq) {
    if (useq.empty()) throw ParameterError("total_cost: empty input sequence");
    std::vector<double> terms;
    terms.reserve(useq.size() + 1);
    StateVector x = x0;
    for (std::size_t k = 0; k < useq.size(); ++k) {
        terms.push_back(stage_cost(spec, x, useq[k]));
        StateVector next = step(model, x, useq[k]);
        if (!next.allFinite())
            throw RolloutOverflow("total_cost: non-finite state at step " +
                                      std::to_string(k + 1),
                                  static_cast<int>(k + 1));
        x = std::move(next);
    }
    terms.push_back(terminal_cost(spec, x));
    return sum_backwards(terms);
}

double total_cost(const CostSpec& spec, const OpenLoopTrajectory& traj) {
    std::vector<double> terms;
    terms.reserve(traj.inputs.size() + 1);
    for (std::size_t k = 0; k < traj.inputs.size(); ++k)
        terms.push_back(stage_cost(spec, traj.states[k], traj.inputs[k]));
    terms.push_back(terminal_cost(spec, traj.states.back()));
    return sum_backwards(terms);
}

ComparisonBoundsReport verify_comparison_bounds(const CostSpec& spec) {
    return verify_comparison_bounds(spec.state_weight, spec.input_weight,
                                    spec.terminal_weight);
}

ComparisonBoundsReport verify_comparison_bounds(const Matrix& Q, const Matrix& R,
                                                const Matrix& P) {
    ComparisonBoundsReport report;
    report.min_eig_state = min_eigenvalue_symmetric(Q);
    report.min_eig_input = min_eigenvalue_symmetric(R);
    report.min_eig_terminal = min_eigenvalue_symmetric(P);
    report.pass = report.min_eig_state > kEigenvalueTol &&
                  report.min_eig_input > kEigenvalueTol &&
                  report.min_eig_terminal > kEigenvalueTol;
    return report;
}

}  // namespace mbmpc
