#include "mbmpc/terminal_design.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace mbmpc {

namespace detail {

double halton(int index, int base) {
    double f = 1.0;
    double r = 0.0;
    int i = index + 1;  // skip the leading zero
    while (i > 0) {
        f /= base;
        r += f * (i % base);
        i /= base;
    }
    return r;
}

// Acklam's rational approximation of the probit function.
double inverse_normal_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    if (p <= 0.0 || p >= 1.0)
        throw ParameterError("inverse_normal_cdf: p outside (0,1)");
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
                c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - plow) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
                 c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
           q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

namespace {

constexpr double kDareConvergence = 1e-12;
constexpr int kDareMaxIterations = 100000;
constexpr double kClfSlack = 1e-9;

const int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31};

Matrix scaled_riccati_rhs(const Matrix& P, const Matrix& A, const Matrix& B,
                          const Matrix& Q, const Matrix& R, double rho) {
    const Matrix BtPB = B.transpose() * P * B;
    const Matrix BtPA = B.transpose() * P * A;
    const Matrix inner = rho * R + BtPB;
    return A.transpose() * P * A -
           BtPA.transpose() * inner.ldlt().solve(BtPA) + rho * Q;
}

}  // namespace

double dare_residual(const Matrix& P, const Matrix& A, const Matrix& B,
                     const Matrix& Q, const Matrix& R, double rho) {
    return (P - scaled_riccati_rhs(P, A, B, Q, R, rho)).norm();
}

Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q,
                  const Matrix& R, double rho) {
    if (rho < 1.0) throw ParameterError("solve_dare: scaling must be >= 1");
    Matrix P = rho * Q;
    bool converged = false;
    for (int it = 0; it < kDareMaxIterations; ++it) {
        Matrix next = scaled_riccati_rhs(P, A, B, Q, R, rho);
        next = 0.5 * (next + next.transpose());  // keep symmetric
        const double diff = (next - P).norm();
        P = std::move(next);
        if (diff <= kDareConvergence) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError("solve_dare: fixed-point iteration did not converge");
    const Matrix K = lqr_gain(A, B, P, R, rho);
    if (spectral_radius(A - B * K) >= 1.0)
        throw StabilizabilityError("solve_dare: closed loop is not contractive");
    return P;
}

Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& P,
                const Matrix& R, double rho) {
    const Matrix inner = rho * R + B.transpose() * P * B;
    return inner.ldlt().solve(B.transpose() * P * A);
}

double spectral_radius(const Matrix& M) {
    Eigen::EigenSolver<Matrix> es(M, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

TerminalIngredients design_terminal_ingredients(const SystemModel& model,
                                                const CostSpec& spec,
                                                double rho, double level) {
    if (level <= 0.0)
        throw ParameterError("design_terminal_ingredients: level must be > 0");
    const auto [A, B] =
        linearize(model, model.steady_state_x, model.steady_state_u);
    TerminalIngredients ing;
    ing.riccati = solve_dare(A, B, spec.state_weight, spec.input_weight, rho);
    ing.gain = lqr_gain(A, B, ing.riccati, spec.input_weight, rho);
    ing.level = level;
    ing.scaling = rho;
    return ing;
}

TerminalSet terminal_set(const TerminalIngredients& ing) {
    return TerminalSet{ing.riccati, ing.level};
}

InputVector local_control(const TerminalIngredients& ing, const StateVector& x) {
    return -(ing.gain * x);
}

InputSequence local_warmstart(const SystemModel& model,
                              const TerminalIngredients& ing,
                              const StateVector& x, int N) {
    if (N < 1) throw ParameterError("local_warmstart: horizon must be >= 1");
    const TerminalSet set = terminal_set(ing);
    if (!set.contains(x))
        throw TerminalMembershipError(
            "local_warmstart: state outside the terminal set");
    InputSequence useq;
    useq.reserve(N);
    StateVector xi = x;
    for (int k = 0; k < N; ++k) {
        InputVector u = local_control(ing, xi);
        xi = step(model, xi, u);
        useq.push_back(std::move(u));
    }
    return useq;
}

TerminalCertificate validate_terminal_set(const SystemModel& model,
                                          const CostSpec& spec,
                                          const TerminalIngredients& ing,
                                          const Box& state_box,
                                          const Box& input_box, int samples) {
    if (samples < 1)
        throw ParameterError("validate_terminal_set: need at least one sample");
    const int n = model.state_dim;
    if (n > static_cast<int>(sizeof(kPrimes) / sizeof(kPrimes[0])) - 1)
        throw ParameterError("validate_terminal_set: state dimension too large");

    // x = sqrt(level) * r * L^{-T} e with P = L L^T maps the unit ball
    // (direction e, radius r) onto the sublevel set.
    const Eigen::LLT<Matrix> llt(ing.riccati);
    if (llt.info() != Eigen::Success)
        throw ParameterError("validate_terminal_set: terminal weight not SPD");
    const Matrix Lt = llt.matrixL().transpose();

    TerminalCertificate cert;
    cert.samples = samples;
    cert.worst_invariance = -std::numeric_limits<double>::infinity();
    cert.worst_clf = -std::numeric_limits<double>::infinity();
    cert.worst_input = -std::numeric_limits<double>::infinity();
    cert.worst_state = -std::numeric_limits<double>::infinity();

    const TerminalSet set = terminal_set(ing);
    for (int s = 0; s < samples; ++s) {
        Vector dir(n);
        for (int d = 0; d < n; ++d) {
            double t = detail::halton(s, kPrimes[d]);
            t = std::min(std::max(t, 1e-12), 1.0 - 1e-12);
            dir[d] = detail::inverse_normal_cdf(t);
        }
        double norm = dir.norm();
        if (norm == 0.0) {
            dir.setZero();
            dir[0] = 1.0;
            norm = 1.0;
        }
        dir /= norm;
        // First half of the budget probes the boundary, second the interior.
        double radius = 1.0;
        if (s % 2 == 1) {
            const double t = detail::halton(s, kPrimes[n]);
            radius = std::pow(std::min(std::max(t, 1e-12), 1.0), 1.0 / n);
        }
        const StateVector x =
            std::sqrt(ing.level) * radius *
            Lt.triangularView<Eigen::Upper>().solve(dir);

        const InputVector u = local_control(ing, x);
        const StateVector xp = step(model, x, u);
        const double inv_margin = set.value(xp) - ing.level;
        const double clf_margin =
            set.value(xp) - set.value(x) + stage_cost(spec, x, u);
        const double input_margin = input_box.violation(u);
        const double state_margin = state_box.violation(x);

        if (inv_margin > cert.worst_invariance) {
            cert.worst_invariance = inv_margin;
            cert.witness_invariance = x;
        }
        if (clf_margin > cert.worst_clf) {
            cert.worst_clf = clf_margin;
            cert.witness_clf = x;
        }
        if (input_margin > cert.worst_input) {
            cert.worst_input = input_margin;
            cert.witness_input = x;
        }
        if (state_margin > cert.worst_state) {
            cert.worst_state = state_margin;
            cert.witness_state = x;
        }
    }

    cert.pass = cert.worst_invariance <= TerminalSet::kMembershipSlack &&
                cert.worst_clf <= kClfSlack && cert.worst_input <= 0.0 &&
                cert.worst_state <= 0.0;
    return cert;
}

double calibrate_pi(const SystemModel& model, const CostSpec& spec,
                    const Matrix& riccati, const Matrix& gain, double scaling,
                    const Box& state_box, const Box& input_box, int samples,
                    double tolerance) {
    if (tolerance <= 0.0)
        throw ParameterError("calibrate_pi: tolerance must be > 0");
    auto passes = [&](double level) {
        TerminalIngredients ing{riccati, gain, level, scaling};
        return validate_terminal_set(model, spec, ing, state_box, input_box,
                                     samples)
            .pass;
    };

    double lo = 1e-6;
    if (!passes(lo)) throw DesignFailure("calibrate_pi: no positive level validates");

    double hi = std::max(1.0, 2.0 * lo);
    int growth = 0;
    while (passes(hi)) {
        lo = hi;
        hi *= 2.0;
        if (++growth > 60)
            throw DesignFailure("calibrate_pi: level grew without bound");
    }
    while (hi - lo > tolerance) {
        const double mid = 0.5 * (lo + hi);
        if (passes(mid))
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

}  // namespace mbmpc
