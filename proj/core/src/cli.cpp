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

#include "hycaps/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <fmt/core.h>
#include <json.hpp>

namespace hycaps {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_bytes(const fs::path& path, const std::string& bytes)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("short write to " + path.string());
    }
}

std::string utc_now()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Collects artifacts written under the output directory.
class Run
{
public:
    Run(std::string command, const CommandOptions& options)
        : out_(options.out), start_(std::chrono::steady_clock::now())
    {
        if (out_.empty()) {
            throw std::invalid_argument(command + " needs --out");
        }
        fs::create_directories(out_);
        manifest_.command = std::move(command);
        manifest_.seed = options.seed;
        if (options.config) {
            manifest_.config_path = options.config->generic_string();
        }
        manifest_.started_at = utc_now();
    }

    void input(const fs::path& path, const std::string& label)
    {
        manifest_.inputs.push_back({label, sha256_file(path)});
    }

    void write(const std::string& rel, const std::string& bytes)
    {
        write_bytes(out_ / rel, bytes);
        manifest_.outputs.push_back({rel, sha256_hex(bytes)});
    }

    RunManifest finish()
    {
        manifest_.finished_at = utc_now();
        manifest_.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        write_bytes(out_ / ("run_manifest_" + manifest_.command + ".json"), manifest_.to_json());
        return manifest_;
    }

private:
    fs::path out_;
    std::chrono::steady_clock::time_point start_;
    RunManifest manifest_;
};

const fs::path& require(const std::optional<fs::path>& p, const char* command, const char* flag)
{
    if (!p) {
        throw std::invalid_argument(fmt::format("{} needs {}", command, flag));
    }
    return *p;
}

std::optional<std::string> env_value(const std::string& name, const std::map<std::string, std::string>* env)
{
    if (env != nullptr) {
        if (auto it = env->find(name); it != env->end()) {
            return it->second;
        }
        return std::nullopt;
    }
    if (const char* v = std::getenv(name.c_str())) {
        return std::string(v);
    }
    return std::nullopt;
}

std::string env_name(const std::string& key)
{
    std::string name = kEnvPrefix;
    for (char ch : key) {
        name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
    return name;
}

DatasetManifest only_split(const DatasetManifest& m, Split split)
{
    DatasetManifest out;
    out.classes = m.classes;
    out.root = m.root;
    out.entries = m.in_split(split);
    return out;
}

DatasetManifest read_prepared(const fs::path& dir)
{
    auto m = read_manifest(dir / "manifest.txt");
    if (m.root.empty()) {
        throw DataError("manifest in " + dir.string() + " has no #root line; run prepare first");
    }
    return m;
}

EncodedSet load_split(const DatasetManifest& m, Split split, std::size_t input_size)
{
    std::vector<Sample> samples;
    for (const auto& e : m.entries) {
        if (e.split != split) {
            continue;
        }
        samples.push_back(Sample{render_entry(e, m.root, input_size), e.label, e.source_id, e.augmented_from});
    }
    if (samples.empty()) {
        throw DataError("the " + to_string(split) + " split is empty");
    }
    return normalize_encode(samples, m.classes.size());
}

void check_classes(const DatasetManifest& m, const ExperimentConfig& config)
{
    if (m.classes.size() != config.num_classes) {
        throw ConfigError({fmt::format("num_classes = {} but the prepared data has {} classes", config.num_classes,
                                       m.classes.size())});
    }
}

std::string params_hash(const ModelGraph& graph, const std::string& prefix)
{
    const auto bytes = serialize(snapshot(graph, prefix));
    return sha256_hex(std::string(bytes.begin(), bytes.end()));
}

std::string checkpoint_bytes(const Checkpoint& ckpt)
{
    const auto bytes = serialize(ckpt);
    return std::string(bytes.begin(), bytes.end());
}

void resolve_pretrained(ExperimentConfig& config, const CommandOptions& options)
{
    if (!config.pretrained.empty() && options.config && fs::path(config.pretrained).is_relative()) {
        config.pretrained = (options.config->parent_path() / config.pretrained).lexically_normal().generic_string();
    }
}

void log_epoch(const CommandOptions& options, const EpochRecord& r)
{
    if (options.verbose) {
        fmt::print(stderr, "epoch {:3d}  train_loss {:.4f}  train_acc {:.3f}  val_loss {:.4f}  val_acc {:.3f}  ({:.1f}s)\n",
                   r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_seconds);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Hashes and run manifests

std::string sha256_hex(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        hex += fmt::format("{:02x}", digest[i]);
    }
    return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

std::string RunManifest::to_json() const
{
    auto hashes = [](const std::vector<ArtifactHash>& list) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& a : list) {
            arr.push_back({{"path", a.path}, {"sha256", a.sha256}});
        }
        return arr;
    };
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = config_path;
    j["seed"] = seed;
    j["inputs"] = hashes(inputs);
    j["outputs"] = hashes(outputs);
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["wall_seconds"] = wall_seconds;
    return j.dump(2) + "\n";
}

RunManifest RunManifest::parse(const std::string& json)
{
    const auto j = nlohmann::json::parse(json);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_path = j.at("config").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& a : j.at("inputs")) {
        m.inputs.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>()});
    }
    for (const auto& a : j.at("outputs")) {
        m.outputs.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>()});
    }
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.wall_seconds = j.at("wall_seconds").get<double>();
    return m;
}

RunManifest read_run_manifest(const fs::path& path) { return RunManifest::parse(read_text(path)); }

// ---------------------------------------------------------------------------
// prepare

RunManifest cmd_prepare(const CommandOptions& options)
{
    const auto& root_arg = require(options.data_root, "prepare", "--data-root");
    const auto config = resolve_experiment_config(options);
    Run run("prepare", options);

    const auto root = fs::absolute(root_arg).lexically_normal();
    auto manifest = scan_directory(root);
    manifest.root = root.generic_string();

    std::string geometry = "path\theight\twidth\tscaled_height\tscaled_width\ttop\tleft\n";
    for (const auto& e : manifest.entries) {
        const auto path = root / e.path;
        Image img;
        try {
            img = load_image(path);
        } catch (const ImageError& err) {
            throw DataError("unreadable image " + e.path + ": " + err.what());
        }
        const auto g = pad_resize_geometry(img.height, img.width, config.input_size);
        geometry += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\n", e.path, img.height, img.width, g.scaled_height,
                                g.scaled_width, g.top, g.left);
        run.input(path, e.path);
    }

    auto split = stratified_split(manifest, SplitFractions{}, options.seed);
    auto plan = AugmentationPlan::class_balancing(options.seed);
    std::erase_if(plan.per_class_extra, [&](const auto& kv) {
        return std::find(split.classes.begin(), split.classes.end(), kv.first) == split.classes.end();
    });
    const auto prepared = augment(split, plan);

    run.write("manifest.txt", format_manifest(prepared));
    for (auto s : {Split::train, Split::val, Split::test}) {
        run.write(to_string(s) + ".txt", format_manifest(only_split(prepared, s)));
    }
    run.write("images.tsv", geometry);
    run.write("distribution.tsv", class_distribution_report(prepared).to_text());
    return run.finish();
}

// ---------------------------------------------------------------------------
// pretrain

PretrainConfig load_pretrain_config(const std::optional<fs::path>& path, std::uint64_t seed,
                                    const std::map<std::string, std::string>* env)
{
    PretrainConfig c;
    std::vector<std::string> problems;
    auto set = [&](const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            auto as_size = [&] {
                if (value.empty() || value[0] == '-') {
                    throw std::invalid_argument("negative");
                }
                auto v = std::stoull(value, &used);
                if (used != value.size()) {
                    throw std::invalid_argument("trailing characters");
                }
                return static_cast<std::size_t>(v);
            };
            if (key == "extractor") {
                extractor_preset(value);
                c.extractor = value;
            } else if (key == "input_size") {
                c.input_size = as_size();
            } else if (key == "train_per_class") {
                c.train_per_class = as_size();
            } else if (key == "probe_per_class") {
                c.probe_per_class = as_size();
            } else if (key == "epochs") {
                c.epochs = as_size();
            } else if (key == "batch_size") {
                c.batch_size = as_size();
            } else if (key == "learning_rate") {
                c.learning_rate = std::stod(value, &used);
                if (used != value.size() || !(c.learning_rate > 0)) {
                    throw std::invalid_argument("not a positive number");
                }
            } else if (key == "task") {
                c.task.task = parse_synthetic_task(value);
            } else {
                problems.push_back("unknown key '" + key + "'");
            }
        } catch (const std::exception&) {
            problems.push_back("bad value '" + value + "' for " + key);
        }
    };
    static const std::vector<std::string> keys = {"extractor",  "input_size", "train_per_class", "probe_per_class",
                                                  "epochs",     "batch_size", "learning_rate",   "task"};
    if (path) {
        std::istringstream in(read_text(*path));
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) {
                line.erase(hash);
            }
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) {
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                problems.push_back(fmt::format("line {}: expected key = value", line_no));
                continue;
            }
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    for (const auto& key : keys) {
        if (auto v = env_value(env_name(key), env)) {
            set(key, *v);
        }
    }
    if (c.epochs == 0) {
        problems.push_back("epochs must be at least 1");
    }
    if (c.batch_size == 0) {
        problems.push_back("batch_size must be at least 1");
    }
    if (c.train_per_class == 0 || c.probe_per_class == 0) {
        problems.push_back("train_per_class and probe_per_class must be at least 1");
    }
    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
    c.task.image_size = c.input_size;
    c.seed = seed;
    return c;
}

RunManifest cmd_pretrain(const CommandOptions& options)
{
    const auto config = load_pretrain_config(options.config, options.seed, options.env);
    Run run("pretrain", options);
    if (options.config) {
        run.input(*options.config, options.config->generic_string());
    }
    auto result = pretrain_extractor(config, [&](std::size_t epoch, double loss) {
        if (options.verbose) {
            fmt::print(stderr, "pretrain epoch {:3d}  loss {:.4f}\n", epoch, loss);
        }
    });
    std::string log = "epoch\tloss\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        log += fmt::format("{}\t{:.17g}\n", e + 1, result.epoch_losses[e]);
    }
    run.write("extractor.bin", checkpoint_bytes(result.checkpoint));
    run.write("pretrain_log.tsv", log);
    run.write("probe.tsv", fmt::format("stage\tprobe_accuracy\nbefore\t{:.17g}\nafter\t{:.17g}\n", result.probe_before,
                                       result.probe_after));
    return run.finish();
}

// ---------------------------------------------------------------------------
// train

ExperimentConfig resolve_experiment_config(const CommandOptions& options)
{
    ExperimentConfig config;
    std::vector<std::string> problems;
    if (options.config) {
        bind_config_text(config, read_text(*options.config), problems);
    }
    apply_env_overrides(config, problems, options.env);
    config.seed = options.seed;
    for (auto& p : validate(config)) {
        problems.push_back(std::move(p));
    }
    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
    if (config.experiment == ExperimentKind::frozen_hybrid) {
        config.unfrozen_layers = 0;
    }
    resolve_pretrained(config, options);
    return config;
}

RunManifest cmd_train(const CommandOptions& options)
{
    const auto& data = require(options.data_root, "train", "--data-root");
    const auto config = resolve_experiment_config(options);
    const auto manifest = read_prepared(data);
    check_classes(manifest, config);
    Run run("train", options);
    run.input(data / "manifest.txt", (data / "manifest.txt").generic_string());
    if (options.config) {
        run.input(*options.config, options.config->generic_string());
    }

    std::optional<Checkpoint> pretrained;
    if (!config.pretrained.empty()) {
        pretrained = load_checkpoint(config.pretrained);
        run.input(config.pretrained, config.pretrained);
    }
    const auto train_set = load_split(manifest, Split::train, config.input_size);
    const auto val_set = load_split(manifest, Split::val, config.input_size);

    auto model = build_model(config, pretrained ? &*pretrained : nullptr);
    const std::string head_prefix = model->is_hybrid() ? "capsules" : "head";
    std::string hashes = "epoch\textractor_sha256\thead_sha256\n";
    hashes += fmt::format("0\t{}\t{}\n", params_hash(model->graph(), "extractor"),
                          params_hash(model->graph(), head_prefix));
    TrainOptions topts;
    topts.on_epoch = [&](const EpochRecord& r) {
        hashes += fmt::format("{}\t{}\t{}\n", r.epoch, params_hash(model->graph(), "extractor"),
                              params_hash(model->graph(), head_prefix));
        log_epoch(options, r);
    };
    const auto result = train(*model, train_set, val_set, topts);

    run.write("checkpoint.bin", checkpoint_bytes(result.checkpoint));
    run.write("training_log.tsv", result.log.to_text());
    run.write("config.txt", format_config(config));
    run.write("param_hashes.tsv", hashes);
    return run.finish();
}

// ---------------------------------------------------------------------------
// eval

RunManifest cmd_eval(const CommandOptions& options)
{
    const auto& data = require(options.data_root, "eval", "--data-root");
    const auto& ckpt_path = require(options.checkpoint, "eval", "--checkpoint");
    const auto split = options.split.value_or(Split::test);
    if (split == Split::unassigned) {
        throw std::invalid_argument("eval needs --split train, val or test");
    }
    const auto ckpt = load_checkpoint(ckpt_path);
    auto model = model_from_checkpoint(ckpt);
    const auto manifest = read_prepared(data);
    check_classes(manifest, model->config());

    Run run("eval", options);
    run.input(ckpt_path, ckpt_path.generic_string());
    run.input(data / "manifest.txt", (data / "manifest.txt").generic_string());

    const auto set = load_split(manifest, split, model->config().input_size);
    const auto ev = evaluate(*model, set);
    const auto cm = confusion(set.labels, ev.predictions, manifest.classes.size(), manifest.classes);
    const auto report = compute_report(cm);
    const auto name = to_string(model->config().experiment);
    const std::vector<std::pair<std::string, EvalReport>> rows = {{name, report}};

    const auto stem = "eval_" + to_string(split);
    run.write(stem + "_report.tsv", report_records(name, report));
    run.write(stem + "_confusion.csv", confusion_grid(cm));
    run.write(stem + "_table.txt", render_table(rows));
    if (options.verbose) {
        fmt::print(stderr, "{} {}: accuracy {} macro F1 {}\n", name, to_string(split), format_metric(report.accuracy),
                   format_metric(report.macro_avg.f1));
    }
    return run.finish();
}

// ---------------------------------------------------------------------------
// sweep

RunManifest cmd_sweep(const CommandOptions& options)
{
    const auto& data = require(options.data_root, "sweep", "--data-root");
    const auto& grid_path = require(options.config, "sweep", "--config (grid file)");
    auto grid = SweepGrid::parse(read_text(grid_path));
    std::vector<std::string> problems;
    apply_env_overrides(grid.base, problems, options.env);
    grid.base.seed = options.seed;
    for (std::size_t i = 0; problems.empty() && i < grid.size(); ++i) {
        problems = validate(grid.at(i));
    }
    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
    resolve_pretrained(grid.base, options);

    const auto manifest = read_prepared(data);
    check_classes(manifest, grid.base);
    Run run("sweep", options);
    run.input(grid_path, grid_path.generic_string());
    run.input(data / "manifest.txt", (data / "manifest.txt").generic_string());

    const auto train_set = load_split(manifest, Split::train, grid.base.input_size);
    const auto val_set = load_split(manifest, Split::val, grid.base.input_size);
    const auto result = sweep(grid, train_set, val_set, options.budget, options.seed, [&](const SweepEntry& e) {
        if (options.verbose) {
            fmt::print(stderr, "config {}: val macro F1 {}\n", e.grid_index, format_metric(e.val_macro_f1));
        }
    });

    run.write("ranking.tsv", result.ranking_text());
    run.write("winner.bin", checkpoint_bytes(result.winner));
    auto by_index = result.ranked;
    std::sort(by_index.begin(), by_index.end(),
              [](const SweepEntry& a, const SweepEntry& b) { return a.grid_index < b.grid_index; });
    for (const auto& e : by_index) {
        run.write(fmt::format("runs/{}/training_log.tsv", e.grid_index), e.log.to_text());
        run.write(fmt::format("runs/{}/config.txt", e.grid_index), format_config(e.config));
    }
    return run.finish();
}

// ---------------------------------------------------------------------------
// report

RunManifest cmd_report(const CommandOptions& options)
{
    if (options.reports.empty()) {
        throw std::invalid_argument("report needs at least one eval report file");
    }
    Run run("report", options);
    std::vector<std::pair<std::string, EvalReport>> rows;
    std::string records;
    for (const auto& path : options.reports) {
        const auto text = read_text(path);
        run.input(path, path.generic_string());
        for (auto& row : parse_report_records(text)) {
            rows.push_back(std::move(row));
        }
        records += text;
    }
    run.write("table.txt", render_table(rows));
    run.write("records.tsv", records);
    return run.finish();
}

}  // namespace hycaps
