#include <iostream>

#include "CLI11.hpp"

#include "dualcan/commands.hpp"

int main(int argc, char** argv) {
    using namespace dualcan::cli;
    CLI::App app{"dualcan: noisy domain adaptation experiments"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    Options opts;
    std::string config, data_dir, out_dir;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub, bool needs_data) {
        sub->add_option("--config", config, "YAML config file")->required();
        sub->add_option("--out-dir", out_dir, "output directory (created if absent)")->required();
        if (needs_data) sub->add_option("--data-dir", data_dir, "directory holding source.dcds and target.dcds")->required();
        sub->add_option("--seed", seed, "override the replicate seed");
        sub->add_option("--jobs", opts.jobs, "parallel sweep cells")->check(CLI::PositiveNumber);
    };

    auto* gen = app.add_subcommand("gen", "generate source/target datasets");
    auto* train = app.add_subcommand("train", "train on generated datasets");
    auto* sweep = app.add_subcommand("sweep", "noise-level sweep");
    auto* ablate = app.add_subcommand("ablate", "ablation battery");
    auto* report = app.add_subcommand("report", "warm-up diagnosis and correction curves");
    add_common(gen, false);
    add_common(train, true);
    add_common(sweep, false);
    add_common(ablate, false);
    add_common(report, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    opts.config = config;
    opts.data_dir = data_dir;
    opts.out_dir = out_dir;
    for (auto* sub : app.get_subcommands()) {
        if (sub->count("--seed")) opts.seed = seed;
    }

    if (gen->parsed()) return cmd_gen(opts);
    if (train->parsed()) return cmd_train(opts);
    if (sweep->parsed()) return cmd_sweep(opts);
    if (ablate->parsed()) return cmd_ablate(opts);
    return cmd_report(opts);
}
