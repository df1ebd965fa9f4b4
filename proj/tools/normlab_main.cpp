#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "normlab/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"normlab: normalization-scheme experiment runner"};
    app.require_subcommand(1);

    std::string run_config;
    normlab::RunOptions options;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool strict = false;
    auto* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("config", run_config, "experiment config (JSON)")->required();
    auto* out_opt = run->add_option("--out", out_dir, "output directory override");
    auto* seed_opt = run->add_option("--seed", seed, "seed override (replaces the seeds list)");
    run->add_option("--workers", options.workers, "worker threads for (normalizer, seed) cells")
        ->check(CLI::PositiveNumber);
    run->add_flag("--strict", strict,
                  "accepted for compatibility; validation is always strict");

    std::string validate_config;
    auto* validate = app.add_subcommand("validate", "parse and validate a config, run nothing");
    validate->add_option("config", validate_config, "experiment config (JSON)")->required();

    auto* datasets = app.add_subcommand("datasets", "dataset utilities");
    auto* check = datasets->add_subcommand("check", "report which datasets are readable");
    datasets->require_subcommand(1);

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        if (*out_opt) options.out_dir = out_dir;
        if (*seed_opt) options.seed = seed;
        return normlab::run_config_file(run_config, options, std::cout);
    }
    if (validate->parsed()) {
        return normlab::validate_config_file(validate_config, std::cout);
    }
    if (check->parsed()) {
        return normlab::datasets_check(std::cout);
    }
    return 0;
}
