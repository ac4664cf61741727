#pragma once

#include <functional>
#include <utility>

#include "mbmpc/types.hpp"

namespace mbmpc {

/// Discrete-time system x(k+1) = f(x(k), u(k)) with a declared steady state.
///
/// Transition evaluators are pure functions of their arguments, so rollouts
/// are replayable. Dimensions are validated once at construction.
struct SystemModel {
    using Transition =
        std::function<StateVector(const StateVector&, const InputVector&)>;

    int state_dim = 0;
    int input_dim = 0;
    Transition transition;
    StateVector steady_state_x;
    InputVector steady_state_u;

    SystemModel(int n, int m, Transition f, StateVector xs, InputVector us);

    StateVector step(const StateVector& x, const InputVector& u) const;
};

/// Open-loop trajectory: N+1 states and the N inputs that generated them.
struct OpenLoopTrajectory {
    std::vector<StateVector> states;
    InputSequence inputs;

    int horizon() const { return static_cast<int>(inputs.size()); }
};

StateVector step(const SystemModel& model, const StateVector& x,
                 const InputVector& u);

/// Iterates the transition map; throws RolloutOverflow (with the offending
/// step index) if an intermediate state turns non-finite.
OpenLoopTrajectory rollout(const SystemModel& model, const StateVector& x0,
                           const InputSequence& useq);

/// Euler-discretized Van der Pol oscillator with unit stiffness, n=2, m=1.
SystemModel vdp_model(double ts);

/// Central-difference Jacobians (A, B) of the transition map at (x, u).
/// Per-coordinate stencil width max(h_base, h_base*|coordinate|).
std::pair<Matrix, Matrix> linearize(const SystemModel& model,
                                    const StateVector& x, const InputVector& u,
                                    double h_base = 1e-6);

}  // namespace mbmpc
