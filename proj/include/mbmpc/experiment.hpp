#pragma once

#include <map>
#include <string>

#include "mbmpc/controller.hpp"

namespace mbmpc {

/// Fully determined experiment description. Defaults reproduce the benchmark
/// configuration: Van der Pol at t_s = 2^-5, Q = diag(1, 0.1), input weight
/// 0.1, rho = 1.001, level 0.4856, N = 80, unit boxes.
struct ExperimentConfig {
    double ts = 1.0 / 32.0;
    std::vector<double> q_diag = {1.0, 0.1};
    double input_weight = 0.1;
    double rho = 1.001;
    double pi = 0.4856;
    bool calibrate_level = false;
    int horizon = 80;
    std::string pattern = "uniform:2";  // or "explicit:l1 l2 ..."
    std::string mode = "buffered";      // plain | buffered | offset
    int max_iterations = 3;
    double eta = 1e-3;
    std::vector<double> x0 = {-0.4, 0.6};
    int steps = 200;
    std::vector<double> x_min = {-1.0, -1.0};
    std::vector<double> x_max = {1.0, 1.0};
    std::vector<double> u_min = {-1.0};
    std::vector<double> u_max = {1.0};
    int terminal_samples = 10000;
    double calibration_tolerance = 1e-4;
    int benchmark_repetitions = 100;
    int benchmark_iterations = 25;
    int oracle_grid = 21;
    int oracle_horizon = 4;
    int oracle_blocks = 2;

    /// Key/value form used by the config file format and the resolved echo.
    std::map<std::string, std::string> to_entries() const;
    static ExperimentConfig from_entries(
        const std::map<std::string, std::string>& entries);
};

/// Flat "section.key = value" text, one entry per line, '#' comments.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

/// Named experiment presets t0..t6 applied on top of the defaults.
ExperimentConfig apply_preset(ExperimentConfig config, const std::string& name);

/// Everything the commands need, instantiated from a config.
struct ExperimentSetup {
    SystemModel model;
    CostSpec spec;
    TerminalIngredients terminal;
    ConstraintSet constraints;
    BlockingPattern blocking;
    ControllerConfig controller;
};

ExperimentSetup build_setup(const ExperimentConfig& config);

/// Subcommand entry points; each writes its artifacts under out_dir and
/// returns a process exit status.
int cmd_simulate(const ExperimentConfig& config, const std::string& out_dir);
int cmd_validate_terminal(const ExperimentConfig& config,
                          const std::string& out_dir);
int cmd_benchmark(const ExperimentConfig& config, const std::string& out_dir,
                  int repetitions);
int cmd_oracle_compare(const ExperimentConfig& config,
                       const std::string& out_dir);

/// One benchmark row: wall-clock spent inside solve() for cold starts.
struct BenchmarkRow {
    std::string label;
    int blocks = 0;
    bool offset = false;
    double median_ms = 0.0;
    double quantile95_ms = 0.0;
};

std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& config,
                                        int repetitions);

}  // namespace mbmpc
