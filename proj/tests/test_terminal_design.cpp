#include <doctest.h>

#include <cmath>

#include "mbmpc/terminal_design.hpp"
#include "test_util.hpp"

using namespace mbmpc;

namespace {

Matrix scalar(double v) {
    Matrix m(1, 1);
    m << v;
    return m;
}

Matrix diag2(double a, double b) {
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

CostSpec benchmark_spec() {
    return CostSpec::scalar_input(diag2(1.0, 0.1), 0.1, Matrix::Identity(2, 2));
}

// The benchmark setup used throughout: Van der Pol, the quadratic weights,
// scaling 1.001 and the published level 0.4856.
struct Benchmark {
    SystemModel model = vdp_model(1.0 / 32.0);
    CostSpec spec = benchmark_spec();
    TerminalIngredients ing =
        design_terminal_ingredients(model, spec, 1.001, 0.4856);
    // Cost spec actually used in experiments: terminal weight = Riccati matrix.
    CostSpec run_spec =
        CostSpec::scalar_input(diag2(1.0, 0.1), 0.1, ing.riccati);
    Box state_box = Box::symmetric(2, 1.0);
    Box input_box = Box::symmetric(1, 1.0);
};

// Independent fixed-point oracle for the scalar Riccati recursion.
double scalar_dare_oracle(double a, double b, double q, double r, double rho) {
    double p = rho * q;
    for (int i = 0; i < 200000; ++i) {
        const double next =
            a * p * a - (a * p * b) * (a * p * b) / (rho * r + b * p * b) +
            rho * q;
        if (std::abs(next - p) < 1e-15) return next;
        p = next;
    }
    return p;
}

// Power-iteration spectral radius, independent of the Eigen-based routine.
double power_iteration_radius(const Matrix& M) {
    Vector v = Vector::Ones(M.rows()).normalized();
    double lambda = 0.0;
    for (int i = 0; i < 10000; ++i) {
        Vector w = M * v;
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        w /= norm;
        lambda = norm;
        v = w;
    }
    return lambda;
}

}  // namespace

TEST_CASE("solve_dare scalar golden-ratio case") {
    const Matrix P = solve_dare(scalar(1), scalar(1), scalar(1), scalar(1), 1.0);
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    CHECK(P(0, 0) == doctest::Approx(golden).epsilon(1e-11));
    CHECK(P(0, 0) ==
          doctest::Approx(scalar_dare_oracle(1, 1, 1, 1, 1.0)).epsilon(1e-11));
}

TEST_CASE("solve_dare collapses to rho*Q when A is zero") {
    Matrix A = Matrix::Zero(2, 2);
    Matrix B(2, 1);
    B << 1, 1;
    const Matrix P = solve_dare(A, B, diag2(2.0, 3.0), scalar(1), 1.5);
    CHECK((P - 1.5 * diag2(2.0, 3.0)).norm() < 1e-12);
}

TEST_CASE("solve_dare on the Van der Pol linearization") {
    Benchmark bench;
    const auto [A, B] =
        linearize(bench.model, bench.model.steady_state_x, bench.model.steady_state_u);
    const double residual =
        dare_residual(bench.ing.riccati, A, B, bench.spec.state_weight,
                      bench.spec.input_weight, 1.001);
    CHECK(residual <= 1e-8);
    CHECK(bench.ing.riccati.isApprox(bench.ing.riccati.transpose(), 1e-12));

    SUBCASE("closed loop is contractive (power-iteration oracle)") {
        const Matrix closed = A - B * bench.ing.gain;
        CHECK(power_iteration_radius(closed) < 1.0);
        CHECK(spectral_radius(closed) < 1.0);
    }
}

TEST_CASE("lqr gain") {
    SUBCASE("scalar case follows from the closed-form Riccati value") {
        const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
        const Matrix K =
            lqr_gain(scalar(1), scalar(1), scalar(golden), scalar(1), 1.0);
        CHECK(K(0, 0) == doctest::Approx(golden / (1.0 + golden)).epsilon(1e-12));
    }

    SUBCASE("zero input matrix gives zero gain") {
        const Matrix K = lqr_gain(Matrix::Identity(2, 2), Matrix::Zero(2, 1),
                                  Matrix::Identity(2, 2), scalar(1), 1.0);
        CHECK(K.norm() == 0.0);
    }
}

TEST_CASE("local control law") {
    Benchmark bench;
    CHECK(local_control(bench.ing, Vector::Zero(2)).norm() == 0.0);

    Vector x(2);
    x << 0.1, -0.2;
    const Vector u1 = local_control(bench.ing, x);
    const Vector u2 = local_control(bench.ing, 2.0 * x);
    CHECK(u2[0] == doctest::Approx(2.0 * u1[0]).epsilon(1e-14));

    SUBCASE("scalar gain example") {
        const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
        TerminalIngredients scalar_ing{scalar(golden),
                                       scalar(golden / (1.0 + golden)), 1.0, 1.0};
        Vector one(1);
        one << 1.0;
        CHECK(local_control(scalar_ing, one)[0] ==
              doctest::Approx(-0.6180339887).epsilon(1e-9));
    }
}

TEST_CASE("local warm-start") {
    Benchmark bench;

    SUBCASE("zero state yields the zero sequence") {
        const auto useq = local_warmstart(bench.model, bench.ing, Vector::Zero(2), 5);
        for (const auto& u : useq) CHECK(u.norm() == 0.0);
    }

    SUBCASE("single application") {
        Vector x(2);
        x << 0.05, -0.1;
        const auto useq = local_warmstart(bench.model, bench.ing, x, 1);
        REQUIRE(useq.size() == 1);
        CHECK(useq[0] == local_control(bench.ing, x));
    }

    SUBCASE("rejects states outside the terminal set") {
        Vector x(2);
        x << 10.0, 10.0;
        CHECK_THROWS_AS(local_warmstart(bench.model, bench.ing, x, 5),
                        TerminalMembershipError);
    }

    SUBCASE("closed local rollout stays in the terminal set") {
        const TerminalSet set = terminal_set(bench.ing);
        test::DetRng rng(5);
        for (int trial = 0; trial < 10; ++trial) {
            // Scale a raw sample into the set.
            Vector x = rng.vector(2, -1, 1);
            const double value = set.value(x);
            x *= std::sqrt(0.9 * bench.ing.level / value);
            REQUIRE(set.contains(x));
            const auto useq = local_warmstart(bench.model, bench.ing, x, 40);
            const auto traj = rollout(bench.model, x, useq);
            for (const auto& xi : traj.states) CHECK(set.contains(xi));
        }
    }
}

TEST_CASE("terminal-set certificate") {
    Benchmark bench;

    SUBCASE("published level: invariance and admissibility hold, CLF is marginal") {
        // At the published level 0.4856 the decrease inequality is violated
        // by a few 1e-9 on the set boundary; the level appears to be rounded
        // up from the true threshold (see the calibration case below). The
        // other three checks hold with wide margins.
        const auto cert = validate_terminal_set(bench.model, bench.spec, bench.ing,
                                                bench.state_box, bench.input_box,
                                                10000);
        CHECK(cert.worst_invariance <= -1e-3);
        CHECK(cert.worst_input <= 0.0);
        CHECK(cert.worst_state <= 0.0);
        CHECK(cert.worst_clf > 1e-9);
        CHECK(cert.worst_clf < 2e-8);
        CHECK_FALSE(cert.pass);
    }

    SUBCASE("slightly smaller level passes everything") {
        TerminalIngredients ing = bench.ing;
        ing.level = 0.4853;
        const auto cert = validate_terminal_set(bench.model, bench.spec, ing,
                                                bench.state_box, bench.input_box,
                                                10000);
        CHECK(cert.pass);
        CHECK(cert.worst_clf <= 1e-9);
        CHECK(cert.worst_invariance <= TerminalSet::kMembershipSlack);
        CHECK(cert.worst_input <= 0.0);
        CHECK(cert.worst_state <= 0.0);
    }

    SUBCASE("inflated level fails with an input-bound witness") {
        TerminalIngredients big = bench.ing;
        big.level = 1e3;
        const auto cert = validate_terminal_set(bench.model, bench.spec, big,
                                                bench.state_box, bench.input_box,
                                                2000);
        CHECK_FALSE(cert.pass);
        CHECK(cert.worst_input > 0.0);
        // The witness actually violates the input bound.
        const Vector u = local_control(big, cert.witness_input);
        CHECK(bench.input_box.violation(u) > 0.0);
    }

    SUBCASE("tiny level still passes") {
        TerminalIngredients tiny = bench.ing;
        tiny.level = 1e-7;
        const auto cert = validate_terminal_set(bench.model, bench.spec, tiny,
                                                bench.state_box, bench.input_box,
                                                2000);
        CHECK(cert.pass);
    }

    SUBCASE("pointwise CLF inequality on sampled members") {
        const TerminalSet set = terminal_set(bench.ing);
        test::DetRng rng(9);
        for (int trial = 0; trial < 200; ++trial) {
            Vector x = rng.vector(2, -1, 1);
            x *= std::sqrt(rng.uniform(0.0, 1.0) * bench.ing.level / set.value(x));
            const Vector u = local_control(bench.ing, x);
            const Vector xp = step(bench.model, x, u);
            CHECK(terminal_cost(bench.run_spec, xp) +
                      stage_cost(bench.run_spec, x, u) <=
                  terminal_cost(bench.run_spec, x) + 1e-9);
        }
    }
}

TEST_CASE("pi calibration") {
    Benchmark bench;
    const int samples = 2000;
    const double tol = 1e-4;

    const double pi = calibrate_pi(bench.model, bench.spec, bench.ing.riccati,
                                   bench.ing.gain, bench.ing.scaling,
                                   bench.state_box, bench.input_box, samples, tol);

    SUBCASE("close to the published level") {
        CHECK(pi >= 0.8 * 0.4856);
        CHECK(pi <= 1.25 * 0.4856);
        MESSAGE("calibrated level: ", pi, " (published: 0.4856)");
    }

    SUBCASE("calibrated level validates, slightly larger level does not") {
        TerminalIngredients at{bench.ing.riccati, bench.ing.gain, pi, 1.001};
        CHECK(validate_terminal_set(bench.model, bench.spec, at, bench.state_box,
                                    bench.input_box, samples)
                  .pass);
        TerminalIngredients above{bench.ing.riccati, bench.ing.gain,
                                  pi + 4.0 * tol, 1.001};
        CHECK_FALSE(validate_terminal_set(bench.model, bench.spec, above,
                                          bench.state_box, bench.input_box, samples)
                        .pass);
    }

    SUBCASE("doubling the input bounds never shrinks the level") {
        const double pi_wide = calibrate_pi(
            bench.model, bench.spec, bench.ing.riccati, bench.ing.gain,
            bench.ing.scaling, bench.state_box, Box::symmetric(1, 2.0), samples, tol);
        CHECK(pi_wide >= pi - tol);
    }
}

TEST_CASE("halton sequence is deterministic and low-discrepancy-ish") {
    CHECK(detail::halton(0, 2) == doctest::Approx(0.5));
    CHECK(detail::halton(1, 2) == doctest::Approx(0.25));
    CHECK(detail::halton(2, 2) == doctest::Approx(0.75));
    CHECK(detail::halton(0, 3) == doctest::Approx(1.0 / 3.0));
    // All values in (0,1).
    for (int i = 0; i < 100; ++i) {
        const double v = detail::halton(i, 5);
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("inverse normal cdf") {
    CHECK(detail::inverse_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(detail::inverse_normal_cdf(0.9772498680518208) ==
          doctest::Approx(2.0).epsilon(1e-6));
    CHECK(detail::inverse_normal_cdf(0.022750131948179195) ==
          doctest::Approx(-2.0).epsilon(1e-6));
}
