#include "mbmpc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace mbmpc {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += fmt(v[i]);
    }
    return out;
}

std::vector<double> parse_vector(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    double v;
    while (ss >> v) out.push_back(v);
    return out;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

Vector to_eigen(const std::vector<double>& v) {
    Vector out(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<int>(i)] = v[i];
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path);
    os << text;
}

}  // namespace

std::map<std::string, std::string> ExperimentConfig::to_entries() const {
    std::map<std::string, std::string> e;
    e["model.ts"] = fmt(ts);
    e["cost.q_diag"] = fmt(q_diag);
    e["cost.input_weight"] = fmt(input_weight);
    e["terminal.rho"] = fmt(rho);
    e["terminal.pi"] = fmt(pi);
    e["terminal.calibrate"] = calibrate_level ? "true" : "false";
    e["terminal.samples"] = std::to_string(terminal_samples);
    e["terminal.calibration_tolerance"] = fmt(calibration_tolerance);
    e["horizon.length"] = std::to_string(horizon);
    e["blocking.pattern"] = pattern;
    e["controller.mode"] = mode;
    e["controller.eta"] = fmt(eta);
    e["solver.max_iterations"] = std::to_string(max_iterations);
    e["init.x0"] = fmt(x0);
    e["run.steps"] = std::to_string(steps);
    e["bounds.x_min"] = fmt(x_min);
    e["bounds.x_max"] = fmt(x_max);
    e["bounds.u_min"] = fmt(u_min);
    e["bounds.u_max"] = fmt(u_max);
    e["benchmark.repetitions"] = std::to_string(benchmark_repetitions);
    e["benchmark.iterations"] = std::to_string(benchmark_iterations);
    e["oracle.grid"] = std::to_string(oracle_grid);
    e["oracle.horizon"] = std::to_string(oracle_horizon);
    e["oracle.blocks"] = std::to_string(oracle_blocks);
    return e;
}

ExperimentConfig ExperimentConfig::from_entries(
    const std::map<std::string, std::string>& entries) {
    ExperimentConfig c;
    for (const auto& [key, value] : entries) {
        if (key == "model.ts") c.ts = std::stod(value);
        else if (key == "cost.q_diag") c.q_diag = parse_vector(value);
        else if (key == "cost.input_weight") c.input_weight = std::stod(value);
        else if (key == "terminal.rho") c.rho = std::stod(value);
        else if (key == "terminal.pi") c.pi = std::stod(value);
        else if (key == "terminal.calibrate") c.calibrate_level = (value == "true");
        else if (key == "terminal.samples") c.terminal_samples = std::stoi(value);
        else if (key == "terminal.calibration_tolerance")
            c.calibration_tolerance = std::stod(value);
        else if (key == "horizon.length") c.horizon = std::stoi(value);
        else if (key == "blocking.pattern") c.pattern = value;
        else if (key == "controller.mode") c.mode = value;
        else if (key == "controller.eta") c.eta = std::stod(value);
        else if (key == "solver.max_iterations") c.max_iterations = std::stoi(value);
        else if (key == "init.x0") c.x0 = parse_vector(value);
        else if (key == "run.steps") c.steps = std::stoi(value);
        else if (key == "bounds.x_min") c.x_min = parse_vector(value);
        else if (key == "bounds.x_max") c.x_max = parse_vector(value);
        else if (key == "bounds.u_min") c.u_min = parse_vector(value);
        else if (key == "bounds.u_max") c.u_max = parse_vector(value);
        else if (key == "benchmark.repetitions")
            c.benchmark_repetitions = std::stoi(value);
        else if (key == "benchmark.iterations")
            c.benchmark_iterations = std::stoi(value);
        else if (key == "oracle.grid") c.oracle_grid = std::stoi(value);
        else if (key == "oracle.horizon") c.oracle_horizon = std::stoi(value);
        else if (key == "oracle.blocks") c.oracle_blocks = std::stoi(value);
        else throw ParameterError("unknown config key: " + key);
    }
    return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> entries;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParameterError("config line without '=': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        entries[key] = value;
    }
    return ExperimentConfig::from_entries(entries);
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open config " + path);
    std::stringstream buffer;
    buffer << is.rdbuf();
    return parse_config_text(buffer.str());
}

std::string serialize_config(const ExperimentConfig& config) {
    std::ostringstream os;
    os << "# resolved experiment configuration\n";
    for (const auto& [key, value] : config.to_entries())
        os << key << " = " << value << "\n";
    return os.str();
}

ExperimentConfig apply_preset(ExperimentConfig config, const std::string& name) {
    if (name == "t0") {  // first open-loop solution, M = 2
        config.mode = "buffered";
        config.pattern = "uniform:2";
        config.steps = 1;
    } else if (name == "t1") {  // plain blocked, M = 2 (cold solves need budget)
        config.mode = "plain";
        config.pattern = "uniform:2";
        config.max_iterations = 25;
    } else if (name == "t2") {  // buffered fallback, M = 2
        config.mode = "buffered";
        config.pattern = "uniform:2";
    } else if (name == "t3") {  // offset, M = 2, zero iterations
        config.mode = "offset";
        config.pattern = "uniform:2";
        config.max_iterations = 0;
    } else if (name == "t4") {  // offset, M = 2
        config.mode = "offset";
        config.pattern = "uniform:2";
        config.max_iterations = 3;
    } else if (name == "t5") {  // unblocked benchmark, M = N (cold-ish budget)
        config.mode = "buffered";
        config.pattern = "uniform:80";
        config.max_iterations = 25;
    } else if (name == "t6") {  // offset, M = 16
        config.mode = "offset";
        config.pattern = "uniform:16";
        config.max_iterations = 3;
    } else {
        throw ParameterError("unknown preset: " + name);
    }
    return config;
}

ExperimentSetup build_setup(const ExperimentConfig& config) {
    const int n = static_cast<int>(config.q_diag.size());
    SystemModel model = vdp_model(config.ts);
    if (model.state_dim != n)
        throw ParameterError("build_setup: q_diag size must match the state dimension");

    Matrix Q = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) Q(i, i) = config.q_diag[i];
    Matrix R(1, 1);
    R << config.input_weight;

    CostSpec design_spec(Q, R, Matrix::Identity(n, n));
    TerminalIngredients ing =
        design_terminal_ingredients(model, design_spec, config.rho, config.pi);

    Box state_box(to_eigen(config.x_min), to_eigen(config.x_max));
    Box input_box(to_eigen(config.u_min), to_eigen(config.u_max));

    if (config.calibrate_level) {
        ing.level = calibrate_pi(model, design_spec, ing.riccati, ing.gain,
                                 ing.scaling, state_box, input_box,
                                 config.terminal_samples,
                                 config.calibration_tolerance);
    }

    CostSpec run_spec(Q, R, ing.riccati);
    ConstraintSet cons(state_box, input_box, terminal_set(ing));

    BlockingPattern blocking;
    if (config.pattern.rfind("uniform:", 0) == 0) {
        blocking = uniform_pattern(config.horizon,
                                   std::stoi(config.pattern.substr(8)));
    } else if (config.pattern.rfind("explicit:", 0) == 0) {
        const auto lengths = parse_vector(config.pattern.substr(9));
        std::vector<int> ilengths;
        for (double l : lengths) ilengths.push_back(static_cast<int>(l));
        blocking = BlockingPattern(ilengths, config.horizon);
    } else {
        throw ParameterError("unknown blocking pattern spec: " + config.pattern);
    }

    ControllerConfig controller;
    if (config.mode == "plain") controller.mode = ControllerMode::plain_blocked;
    else if (config.mode == "buffered")
        controller.mode = ControllerMode::buffered_fallback;
    else if (config.mode == "offset") controller.mode = ControllerMode::offset;
    else throw ParameterError("unknown controller mode: " + config.mode);
    controller.pattern = blocking;
    controller.solver.max_iterations = config.max_iterations;
    controller.regularization = config.eta;
    controller.check_invariants = true;

    return ExperimentSetup{std::move(model), std::move(run_spec), std::move(ing),
                           std::move(cons), std::move(blocking),
                           std::move(controller)};
}

namespace {

void write_openloop_csv(const std::string& path, const SystemModel& model,
                        const StateVector& x0, const InputSequence& plan) {
    const auto traj = rollout(model, x0, plan);
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path);
    const int n = model.state_dim;
    const int m = model.input_dim;
    os << "k";
    for (int i = 1; i <= n; ++i) os << ",x" << i;
    if (m == 1)
        os << ",u";
    else
        for (int i = 1; i <= m; ++i) os << ",u" << i;
    os << "\n";
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        os << k;
        for (int i = 0; i < n; ++i) os << ',' << fmt(traj.states[k][i]);
        if (k < traj.inputs.size())
            for (int i = 0; i < m; ++i) os << ',' << fmt(traj.inputs[k][i]);
        os << "\n";
    }
}

}  // namespace

int cmd_simulate(const ExperimentConfig& config, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/resolved.cfg", serialize_config(config));
    ExperimentSetup setup = build_setup(config);
    const Vector x0 = to_eigen(config.x0);

    try {
        // First-step open-loop plan artifact.
        ExtendedState z0 = make_initial_extended_state(
            setup.model, setup.spec, setup.terminal, setup.constraints, x0,
            setup.blocking);
        StepResult first = controller_step(setup.model, setup.spec, setup.terminal,
                                           setup.constraints, setup.controller, z0);
        write_openloop_csv(out_dir + "/openloop.csv", setup.model, x0, first.plan);

        TrajectoryLog log =
            simulate_closed_loop(setup.model, setup.spec, setup.terminal,
                                 setup.constraints, setup.controller, x0,
                                 config.steps);
        write_trajectory_csv(out_dir + "/trajectory.csv", log);
        const AuditReport audit = lyapunov_audit(log);
        write_text(out_dir + "/audit.txt", format_audit(audit, log));
        std::cout << describe(assemble_blocked(setup.model, setup.spec,
                                               setup.constraints, x0,
                                               config.horizon, setup.blocking))
                  << "\n";
        std::cout << format_audit(audit, log);
        if (log.failed) std::cout << "run ended early: " << log.failure << "\n";
        return 0;
    } catch (const InitializationError& e) {
        std::cerr << "initialization failed: " << e.what() << "\n";
        return 1;
    }
}

int cmd_validate_terminal(const ExperimentConfig& config,
                          const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/resolved.cfg", serialize_config(config));

    const int n = static_cast<int>(config.q_diag.size());
    SystemModel model = vdp_model(config.ts);
    Matrix Q = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) Q(i, i) = config.q_diag[i];
    Matrix R(1, 1);
    R << config.input_weight;
    CostSpec design_spec(Q, R, Matrix::Identity(n, n));
    TerminalIngredients ing =
        design_terminal_ingredients(model, design_spec, config.rho, config.pi);
    Box state_box(to_eigen(config.x_min), to_eigen(config.x_max));
    Box input_box(to_eigen(config.u_min), to_eigen(config.u_max));

    std::ostringstream report;
    report << "terminal certificate, level " << fmt(ing.level) << ", samples "
           << config.terminal_samples << "\n";
    const auto cert = validate_terminal_set(model, design_spec, ing, state_box,
                                            input_box, config.terminal_samples);
    report << "  invariance margin: " << cert.worst_invariance << "\n"
           << "  clf margin:        " << cert.worst_clf << "\n"
           << "  input margin:      " << cert.worst_input << "\n"
           << "  state margin:      " << cert.worst_state << "\n"
           << "  verdict: " << (cert.pass ? "PASS" : "FAIL") << "\n";
    if (!cert.pass) {
        if (cert.worst_input > 0.0)
            report << "  input-bound witness: " << cert.witness_input.transpose()
                   << "\n";
        if (cert.worst_clf > 1e-9)
            report << "  clf witness: " << cert.witness_clf.transpose() << "\n";
    }

    if (config.calibrate_level) {
        const double calibrated = calibrate_pi(
            model, design_spec, ing.riccati, ing.gain, ing.scaling, state_box,
            input_box, config.terminal_samples, config.calibration_tolerance);
        report << "calibrated level: " << fmt(calibrated)
               << " (configured: " << fmt(config.pi) << ")\n";
    }

    write_text(out_dir + "/certificate.txt", report.str());
    std::cout << report.str();
    return cert.pass ? 0 : 2;
}

std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& config,
                                        int repetitions) {
    if (repetitions < 1)
        throw ParameterError("run_benchmark: repetitions must be >= 1");
    ExperimentSetup setup = build_setup(config);
    const Vector x0 = to_eigen(config.x0);
    const int N = config.horizon;

    SolverConfig solver = setup.controller.solver;
    solver.max_iterations = config.benchmark_iterations;

    struct Case {
        std::string label;
        int blocks;
        bool offset;
    };
    const std::vector<Case> cases = {{"blocked M=2", 2, false},
                                     {"blocked M=16", 16, false},
                                     {"blocked M=80", 80, false},
                                     {"offset M=2", 2, true},
                                     {"offset M=16", 16, true}};

    std::vector<BenchmarkRow> rows;
    for (const auto& c : cases) {
        const auto pattern = uniform_pattern(N, c.blocks);
        NlpProblem problem;
        Vector v0;
        double reference = std::numeric_limits<double>::infinity();
        if (c.offset) {
            ExtendedState z = make_initial_extended_state(
                setup.model, setup.spec, setup.terminal, setup.constraints, x0,
                pattern);
            problem = assemble_offset(setup.model, setup.spec, setup.constraints,
                                      x0, N, pattern, z.warmstart, config.eta);
            BlockedSequence zeros;
            zeros.entries.resize(c.blocks, Vector::Zero(1));
            v0 = consistent_initial_point(problem, setup.model, x0, pattern,
                                          zeros, &z.warmstart, 1.0);
            reference = total_cost(setup.model, setup.spec, x0, z.warmstart);
        } else {
            problem = assemble_blocked(setup.model, setup.spec, setup.constraints,
                                       x0, N, pattern);
            BlockedSequence zeros;
            zeros.entries.resize(c.blocks, Vector::Zero(1));
            v0 = consistent_initial_point(problem, setup.model, x0, pattern, zeros);
        }

        std::vector<double> times_ms;
        times_ms.reserve(repetitions);
        for (int rep = 0; rep < repetitions; ++rep) {
            const auto begin = std::chrono::steady_clock::now();
            const auto outcome = solve(problem, v0, reference, solver);
            const auto end = std::chrono::steady_clock::now();
            (void)outcome;
            times_ms.push_back(
                std::chrono::duration<double, std::milli>(end - begin).count());
        }
        std::sort(times_ms.begin(), times_ms.end());
        BenchmarkRow row;
        row.label = c.label;
        row.blocks = c.blocks;
        row.offset = c.offset;
        row.median_ms = times_ms[times_ms.size() / 2];
        row.quantile95_ms =
            times_ms[std::min(times_ms.size() - 1,
                              static_cast<std::size_t>(
                                  std::ceil(0.95 * times_ms.size()) - 1))];
        rows.push_back(row);
    }
    return rows;
}

int cmd_benchmark(const ExperimentConfig& config, const std::string& out_dir,
                  int repetitions) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/resolved.cfg", serialize_config(config));
    const auto rows = run_benchmark(config, repetitions);

    double reference_median = 1.0, reference_q95 = 1.0;
    for (const auto& row : rows)
        if (!row.offset && row.blocks == config.horizon) {
            reference_median = row.median_ms;
            reference_q95 = row.quantile95_ms;
        }

    std::ostringstream os;
    os << "label,blocks,offset,median_ms,q95_ms,ratio_median,ratio_q95\n";
    for (const auto& row : rows)
        os << row.label << ',' << row.blocks << ',' << (row.offset ? 1 : 0) << ','
           << fmt(row.median_ms) << ',' << fmt(row.quantile95_ms) << ','
           << fmt(row.median_ms / reference_median) << ','
           << fmt(row.quantile95_ms / reference_q95) << "\n";
    write_text(out_dir + "/benchmark.csv", os.str());
    std::cout << os.str();
    return 0;
}

int cmd_oracle_compare(const ExperimentConfig& config,
                       const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/resolved.cfg", serialize_config(config));
    ExperimentSetup setup = build_setup(config);
    const Vector x0 = to_eigen(config.x0);
    const int N = config.oracle_horizon;
    const auto pattern = uniform_pattern(N, config.oracle_blocks);

    const auto oracle =
        brute_force_solve(setup.model, setup.spec, setup.constraints, x0, N,
                          pattern, config.oracle_grid);

    const auto problem = assemble_blocked(setup.model, setup.spec,
                                          setup.constraints, x0, N, pattern);
    BlockedSequence zeros;
    zeros.entries.resize(config.oracle_blocks, Vector::Zero(1));
    const Vector v0 =
        consistent_initial_point(problem, setup.model, x0, pattern, zeros);
    SolverConfig solver = setup.controller.solver;
    solver.max_iterations = std::max(solver.max_iterations, 40);
    const auto outcome =
        solve(problem, v0, std::numeric_limits<double>::infinity(), solver);

    std::ostringstream os;
    os << "oracle comparison, N=" << N << " M=" << config.oracle_blocks
       << " grid=" << config.oracle_grid << "\n";
    int status = 0;
    if (!oracle.feasible) {
        const bool solver_feasible = outcome.status == SolveStatus::improved;
        os << "  grid oracle: infeasible\n"
           << "  solver:      " << to_string(outcome.status) << "\n"
           << "  verdict: " << (solver_feasible ? "MISMATCH" : "AGREE (infeasible)")
           << "\n";
        status = solver_feasible ? 2 : 0;
    } else {
        const double bound = oracle.cell_bound + 1e-9;
        const bool within = outcome.status == SolveStatus::improved &&
                            outcome.best_objective <= oracle.best_cost + bound;
        os << "  grid best cost:  " << fmt(oracle.best_cost) << "\n"
           << "  grid cell bound: " << fmt(oracle.cell_bound) << "\n"
           << "  solver cost:     " << fmt(outcome.best_objective) << " ("
           << to_string(outcome.status) << ")\n"
           << "  verdict: " << (within ? "PASS" : "FAIL") << "\n";
        status = within ? 0 : 2;
    }
    write_text(out_dir + "/oracle.txt", os.str());
    std::cout << os.str();
    return status;
}

}  // namespace mbmpc
