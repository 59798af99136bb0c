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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hycaps/data_pipeline.hpp"
#include "hycaps/experiments.hpp"

namespace hycaps {

/**
 * Command implementations behind the hycaps tool. Every command writes only
 * under its output directory and finishes with run_manifest_<command>.json,
 * which lists each artifact with its SHA-256. Artifacts other than the run
 * manifest are byte-identical across reruns with identical inputs.
 */

// Lowercase hex SHA-256 of a byte string or a file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ArtifactHash
{
    std::string path;  // relative to the output directory, or as given for inputs
    std::string sha256;
};

struct RunManifest
{
    std::string command;
    std::string config_path;
    std::uint64_t seed = 0;
    std::vector<ArtifactHash> inputs;
    std::vector<ArtifactHash> outputs;
    std::string started_at;   // UTC, ISO 8601
    std::string finished_at;
    double wall_seconds = 0.0;

    std::string to_json() const;
    static RunManifest parse(const std::string& json);
};

RunManifest read_run_manifest(const std::filesystem::path& path);

// Shared flags. Which ones are required depends on the command.
struct CommandOptions
{
    std::optional<std::filesystem::path> config;
    std::optional<std::filesystem::path> data_root;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    std::optional<Split> split;
    std::optional<std::size_t> budget;
    std::optional<std::filesystem::path> checkpoint;
    std::vector<std::filesystem::path> reports;  // positional inputs of `report`
    // Environment used for HYCAPS_* overrides; the process environment when empty.
    const std::map<std::string, std::string>* env = nullptr;
    bool verbose = false;
};

/**
 * prepare: scans <data-root>/<class>/<image>, records the pad-resize
 * geometry of every image, splits 70/15/15 per class and appends the
 * class-balancing augmentation copies to the training split.
 *
 * Writes manifest.txt, train.txt, val.txt, test.txt, images.tsv and
 * distribution.tsv.
 */
RunManifest cmd_prepare(const CommandOptions& options);

/**
 * Keys accepted by pretrain configs: extractor, input_size, train_per_class,
 * probe_per_class, epochs, batch_size, learning_rate, task.
 */
PretrainConfig load_pretrain_config(const std::optional<std::filesystem::path>& path, std::uint64_t seed,
                                    const std::map<std::string, std::string>* env = nullptr);

/**
 * pretrain: trains the extractor on the synthetic surrogate task.
 *
 * Writes extractor.bin, pretrain_log.tsv and probe.tsv.
 */
RunManifest cmd_pretrain(const CommandOptions& options);

/**
 * Experiment config from --config (defaults when absent), then HYCAPS_*
 * environment overrides, then --seed. Throws ConfigError listing every
 * problem. A relative `pretrained` path resolves against the config file.
 */
ExperimentConfig resolve_experiment_config(const CommandOptions& options);

/**
 * train: trains one experiment on a prepared directory (--data-root).
 *
 * Writes checkpoint.bin, training_log.tsv, config.txt and param_hashes.tsv
 * (per-epoch SHA-256 of the extractor and head parameters).
 */
RunManifest cmd_train(const CommandOptions& options);

/**
 * eval: evaluates --checkpoint on the --split of a prepared directory.
 *
 * Writes eval_<split>_report.tsv, eval_<split>_confusion.csv and
 * eval_<split>_table.txt.
 */
RunManifest cmd_eval(const CommandOptions& options);

/**
 * sweep: samples --budget configs from the grid file given by --config (the
 * whole grid when no budget is set) and ranks them by validation macro F1.
 *
 * Writes ranking.tsv, winner.bin and runs/<grid index>/training_log.tsv.
 */
RunManifest cmd_sweep(const CommandOptions& options);

/**
 * report: merges eval report files into one results table.
 *
 * Writes table.txt and records.tsv.
 */
RunManifest cmd_report(const CommandOptions& options);

}  // namespace hycaps
