#include <CLI11.hpp>

#include <iostream>

#include "mbmpc/experiment.hpp"

using namespace mbmpc;

int main(int argc, char** argv) {
    CLI::App app{"suboptimal move-blocking MPC toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string preset;
    std::string out_dir = "out";
    int steps_override = -1;
    int repetitions = -1;
    bool seedless = false;

    app.add_option("--config", config_path, "experiment config file");
    app.add_option("--preset", preset, "named preset t0..t6");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--steps", steps_override, "closed-loop steps override");
    app.add_flag("--seedless", seedless,
                 "determinism guard; all runs are seedless by construction");

    auto* sim = app.add_subcommand("simulate", "closed-loop simulation");
    auto* val = app.add_subcommand("validate-terminal",
                                   "terminal-set certificate");
    auto* bench = app.add_subcommand("benchmark", "cold-start solve timing");
    bench->add_option("--repetitions", repetitions, "timing repetitions");
    auto* oracle = app.add_subcommand("oracle-compare",
                                      "solver vs exhaustive grid");
    for (auto* sub : {sim, val, bench, oracle}) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig config;
        if (!config_path.empty()) config = load_config(config_path);
        if (!preset.empty()) config = apply_preset(config, preset);
        if (steps_override >= 0) config.steps = steps_override;

        if (sim->parsed()) return cmd_simulate(config, out_dir);
        if (val->parsed()) return cmd_validate_terminal(config, out_dir);
        if (bench->parsed())
            return cmd_benchmark(config, out_dir,
                                 repetitions > 0 ? repetitions
                                                 : config.benchmark_repetitions);
        if (oracle->parsed()) return cmd_oracle_compare(config, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
