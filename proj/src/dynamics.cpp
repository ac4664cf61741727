#include "mbmpc/dynamics.hpp"

#include <cmath>

namespace mbmpc {

SystemModel::SystemModel(int n, int m, Transition f, StateVector xs,
                         InputVector us)
    : state_dim(n),
      input_dim(m),
      transition(std::move(f)),
      steady_state_x(std::move(xs)),
      steady_state_u(std::move(us)) {
    if (n < 1 || m < 1) throw ParameterError("SystemModel: dimensions must be >= 1");
    if (!transition) throw ParameterError("SystemModel: missing transition map");
    if (steady_state_x.size() != n || steady_state_u.size() != m)
        throw DimensionError("SystemModel: steady-state dimensions mismatch");
    const StateVector fixed = transition(steady_state_x, steady_state_u);
    if (fixed.size() != n || fixed != steady_state_x)
        throw ParameterError("SystemModel: declared steady state is not a fixed point");
}

StateVector SystemModel::step(const StateVector& x, const InputVector& u) const {
    return mbmpc::step(*this, x, u);
}

StateVector step(const SystemModel& model, const StateVector& x,
                 const InputVector& u) {
    if (x.size() != model.state_dim || u.size() != model.input_dim)
        throw DimensionError("step: argument dimensions do not match model");
    return model.transition(x, u);
}

OpenLoopTrajectory rollout(const SystemModel& model, const StateVector& x0,
                           const InputSequence& useq) {
    if (useq.empty()) throw ParameterError("rollout: empty input sequence");
    OpenLoopTrajectory traj;
    traj.states.reserve(useq.size() + 1);
    traj.states.push_back(x0);
    traj.inputs = useq;
    for (std::size_t k = 0; k < useq.size(); ++k) {
        StateVector next = step(model, traj.states.back(), useq[k]);
        if (!next.allFinite())
            throw RolloutOverflow("rollout: non-finite state at step " +
                                      std::to_string(k + 1),
                                  static_cast<int>(k + 1));
        traj.states.push_back(std::move(next));
    }
    return traj;
}

SystemModel vdp_model(double ts) {
    if (!(ts > 0.0)) throw ParameterError("vdp_model: step size must be positive");
    auto f = [ts](const StateVector& x, const InputVector& u) {
        StateVector next(2);
        next[0] = x[0] + ts * x[1];
        next[1] = x[1] + ts * u[0] - ts * x[0] + ts * x[1] * (1.0 - x[0] * x[0]);
        return next;
    };
    return SystemModel(2, 1, f, Vector::Zero(2), Vector::Zero(1));
}

std::pair<Matrix, Matrix> linearize(const SystemModel& model,
                                    const StateVector& x, const InputVector& u,
                                    double h_base) {
    if (!x.allFinite() || !u.allFinite())
        throw EvaluationError("linearize: non-finite expansion point");
    const int n = model.state_dim;
    const int m = model.input_dim;
    Matrix A(n, n), B(n, m);
    StateVector xp = x, xm = x;
    for (int j = 0; j < n; ++j) {
        const double h = std::max(h_base, h_base * std::abs(x[j]));
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        A.col(j) = (model.transition(xp, u) - model.transition(xm, u)) / (2.0 * h);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    InputVector up = u, um = u;
    for (int j = 0; j < m; ++j) {
        const double h = std::max(h_base, h_base * std::abs(u[j]));
        up[j] = u[j] + h;
        um[j] = u[j] - h;
        B.col(j) = (model.transition(x, up) - model.transition(x, um)) / (2.0 * h);
        up[j] = u[j];
        um[j] = u[j];
    }
    return {A, B};
}

}  // namespace mbmpc
