/********************************************************************************
* Copyright 2026 The hycaps Authors
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*    http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
********************************************************************************/

// hycaps: prepare data, pretrain the extractor, train, evaluate, sweep and
// tabulate the baseline and hybrid capsule classifiers.

#include <CLI11.hpp>
#include <fmt/core.h>

#include <exception>
#include <functional>
#include <string>

#include "hycaps/cli.hpp"

namespace {

struct Flags
{
    std::string config;
    std::string data_root;
    std::string out;
    std::uint64_t seed = 0;
    std::string split;
    std::size_t budget = 20;
    std::string checkpoint;
    std::vector<std::string> reports;
    bool verbose = false;
};

hycaps::CommandOptions to_options(const Flags& f)
{
    hycaps::CommandOptions o;
    if (!f.config.empty()) {
        o.config = f.config;
    }
    if (!f.data_root.empty()) {
        o.data_root = f.data_root;
    }
    o.out = f.out;
    o.seed = f.seed;
    if (!f.split.empty()) {
        o.split = hycaps::parse_split(f.split);
    }
    if (f.budget > 0) {
        o.budget = f.budget;
    }
    if (!f.checkpoint.empty()) {
        o.checkpoint = f.checkpoint;
    }
    for (const auto& r : f.reports) {
        o.reports.emplace_back(r);
    }
    o.verbose = f.verbose;
    return o;
}

CLI::App* add_command(CLI::App& app, Flags& f, const std::string& name, const std::string& help)
{
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--out", f.out, "output directory")->required();
    cmd->add_option("--seed", f.seed, "random seed")->required();
    cmd->add_flag("-v,--verbose", f.verbose, "progress on stderr");
    return cmd;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Hybrid DenseNet and capsule network image classifier"};
    app.require_subcommand(1);
    Flags f;

    auto* prepare = add_command(app, f, "prepare", "scan, split and augment a <class>/<image> tree");
    prepare->add_option("--data-root", f.data_root, "image tree root")->required();
    prepare->add_option("--config", f.config, "experiment config (input_size)");

    auto* pretrain = add_command(app, f, "pretrain", "pretrain the extractor on synthetic shapes");
    pretrain->add_option("--config", f.config, "pretrain config");

    auto* train = add_command(app, f, "train", "train one experiment");
    train->add_option("--data-root", f.data_root, "prepared directory")->required();
    train->add_option("--config", f.config, "experiment config");

    auto* eval = add_command(app, f, "eval", "evaluate a trained checkpoint");
    eval->add_option("--data-root", f.data_root, "prepared directory")->required();
    eval->add_option("--checkpoint", f.checkpoint, "checkpoint written by train")->required();
    eval->add_option("--split", f.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

    auto* sweep = add_command(app, f, "sweep", "random search over a hyperparameter grid");
    sweep->add_option("--data-root", f.data_root, "prepared directory")->required();
    sweep->add_option("--config", f.config, "grid file")->required();
    sweep->add_option("--budget", f.budget, "number of configurations, 0 for the full grid")
        ->capture_default_str();

    auto* report = add_command(app, f, "report", "tabulate eval reports");
    report->add_option("reports", f.reports, "eval_<split>_report.tsv files")->required();

    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<CLI::App*, std::function<hycaps::RunManifest(const hycaps::CommandOptions&)>>>
        commands = {{prepare, hycaps::cmd_prepare}, {pretrain, hycaps::cmd_pretrain}, {train, hycaps::cmd_train},
                    {eval, hycaps::cmd_eval},       {sweep, hycaps::cmd_sweep},       {report, hycaps::cmd_report}};
    try {
        const auto options = to_options(f);
        for (const auto& [cmd, run] : commands) {
            if (cmd->parsed()) {
                const auto manifest = run(options);
                if (f.verbose) {
                    fmt::print(stderr, "{}: {} artifacts in {:.1f}s\n", manifest.command, manifest.outputs.size(),
                               manifest.wall_seconds);
                }
            }
        }
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
