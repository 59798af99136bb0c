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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hycaps/capsules.hpp"
#include "hycaps/checkpoint.hpp"
#include "hycaps/data_pipeline.hpp"
#include "hycaps/layers.hpp"
#include "hycaps/metrics.hpp"
#include "hycaps/synthetic.hpp"
#include "hycaps/tensor.hpp"

namespace hycaps {

// ---------------------------------------------------------------------------
// Configuration

enum class ExperimentKind
{
    baseline,
    frozen_hybrid,
    unfrozen_hybrid,
};

enum class OptimizerKind
{
    adam,
    rmsprop,
};

std::string to_string(ExperimentKind kind);
std::string to_string(OptimizerKind kind);
ExperimentKind parse_experiment(const std::string& text);
OptimizerKind parse_optimizer(const std::string& text);

// Carries every problem found, not just the first.
class ConfigError : public std::invalid_argument
{
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

struct ExperimentConfig
{
    ExperimentKind experiment = ExperimentKind::unfrozen_hybrid;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 0.0001;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 10;
    double dropout_rate = 0.4;  // probability of dropping; keep = 1 - rate
    double l2_weight = 0.0001;
    std::size_t batch_size = 50;
    std::size_t primary_kernel = 3;
    std::size_t primary_stride = 2;
    std::size_t unfrozen_layers = 10;  // trailing extractor layers left trainable
    std::uint64_t seed = 0;

    // Architecture and data bindings outside the tuning grid.
    std::string extractor = "small";  // tiny | small | densenet121
    std::size_t input_size = 224;
    std::size_t num_classes = 9;
    std::size_t hidden_units = 256;
    std::size_t capsule_channels = 8;
    std::size_t capsule_dim = 8;
    std::size_t class_capsule_dim = 16;
    std::size_t routing_iters = 3;
    std::string pretrained;  // extractor checkpoint, empty for random init
    // When true the tuning keys must take values from the tuning grid.
    bool grid_domains = true;

    double dropout_keep() const { return 1.0 - dropout_rate; }
    // frozen_hybrid reports unfrozen_layers = 0 whatever was configured.
    std::size_t effective_unfrozen_layers() const;
};

// Allowed values of the tuning keys.
struct GridDomains
{
    static const std::vector<double>& learning_rates();
    static const std::vector<double>& dropout_rates();
    static const std::vector<double>& l2_weights();
    static const std::vector<std::size_t>& batch_sizes();
    static const std::vector<std::size_t>& primary_kernels();
    static const std::vector<std::size_t>& primary_strides();
    static const std::vector<std::size_t>& unfrozen_layers();
};

// Every problem with the config; empty when valid.
std::vector<std::string> validate(const ExperimentConfig& config);
void validate_or_throw(const ExperimentConfig& config);

// Every recognised key, in canonical order.
const std::vector<std::string>& config_keys();

/**
 * Applies one key=value binding. Unknown keys and unparsable values are
 * appended to `problems` instead of throwing, so callers can report them all.
 */
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value,
                      std::vector<std::string>& problems);
std::string get_config_value(const ExperimentConfig& config, const std::string& key);

// Binds every "key = value" line of `text` without validating the result.
void bind_config_text(ExperimentConfig& config, const std::string& text, std::vector<std::string>& problems);

// Flat "key = value" text; '#' starts a comment. Throws ConfigError listing
// every unknown key, bad value and domain violation.
ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& defaults = {});
ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& defaults = {});
std::string format_config(const ExperimentConfig& config);

/**
 * Overrides from the environment: HYCAPS_LEARNING_RATE=0.01 sets
 * learning_rate, and so on for every key. `env` defaults to the process
 * environment; tests pass a map.
 */
inline constexpr const char* kEnvPrefix = "HYCAPS_";
void apply_env_overrides(ExperimentConfig& config, std::vector<std::string>& problems,
                         const std::map<std::string, std::string>* env = nullptr);

ExtractorSpec extractor_preset(const std::string& name);

// ---------------------------------------------------------------------------
// Models

/**
 * One of the three experiment architectures over a shared extractor.
 *
 *   baseline:         extractor -> flatten -> fc+relu -> dropout -> fc(K) -> softmax
 *   frozen_hybrid:    extractor (frozen) -> primary capsules -> class capsules
 *   unfrozen_hybrid:  extractor (last k trainable) -> dropout -> primary -> class capsules
 *
 * Parameter layers are named "extractor.*", "head.fc1", "head.fc2",
 * "capsules.primary" and "capsules.class".
 */
class Model
{
public:
    explicit Model(const ExperimentConfig& config, const Checkpoint* pretrained = nullptr);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ExperimentConfig& config() const { return config_; }
    ModelGraph& graph() { return graph_; }
    const ModelGraph& graph() const { return graph_; }
    const DenseNetExtractor& extractor() const { return extractor_; }

    // Extractor stages [0, frozen_stages()) hold no trainable parameter, so
    // their output can be computed once and cached.
    std::size_t frozen_stages() const;
    Tensor frozen_features(const Tensor& images) const;

    // Head scores from cached frozen features: logits [N,K] for the baseline,
    // class capsules [N,K,D] for the hybrids.
    Tensor forward_from(const Tensor& frozen, Mode mode, std::uint64_t dropout_seed) const;
    Tensor forward(const Tensor& images, Mode mode, std::uint64_t dropout_seed = 0) const;

    // Class probabilities (baseline) or capsule lengths (hybrids), [N,K].
    Tensor class_scores(const Tensor& head) const;
    Tensor data_loss(const Tensor& head, const Tensor& targets) const;
    // l2_weight * sum of squared trainable weights (biases excluded).
    Tensor penalty() const;
    std::vector<std::size_t> predict(const Tensor& head) const;

    bool is_hybrid() const { return config_.experiment != ExperimentKind::baseline; }

private:
    ExperimentConfig config_;
    Rng init_rng_;
    ModelGraph graph_;
    DenseNetExtractor extractor_;
    std::optional<FullyConnected> fc1_;
    std::optional<FullyConnected> fc2_;
    std::optional<PrimaryCapsules> primary_;
    std::optional<ClassCapsules> class_caps_;
};

// Validates the config, then builds the model; trainability is final on return.
std::unique_ptr<Model> build_model(const ExperimentConfig& config, const Checkpoint* pretrained = nullptr);

// ---------------------------------------------------------------------------
// Optimisation

struct AdamParams
{
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct RmspropParams
{
    double decay = 0.9;
    double eps = 1e-8;
};

/**
 * First-order optimiser over a fixed parameter list. Parameters whose
 * requires_grad is false are skipped; a trainable parameter without a
 * gradient is an error.
 */
class Optimizer
{
public:
    Optimizer(std::vector<Tensor> params, OptimizerKind kind, double learning_rate);

    void step();
    std::size_t steps() const { return steps_; }
    OptimizerKind kind() const { return kind_; }

    AdamParams adam;
    RmspropParams rmsprop;

private:
    std::vector<Tensor> params_;
    OptimizerKind kind_;
    double lr_;
    std::size_t steps_ = 0;
    std::vector<std::vector<double>> m_;  // adam first moment
    std::vector<std::vector<double>> v_;  // adam second moment / rmsprop mean square
};

/**
 * Patience counter on validation loss. A loss improves only when strictly
 * below the best so far; epochs are 1-based.
 */
class EarlyStopping
{
public:
    EarlyStopping(std::size_t patience, std::size_t max_epochs);

    // Records one epoch; returns true when training must stop after it.
    bool update(double val_loss);
    std::size_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }
    std::size_t epochs_seen() const { return epoch_; }
    bool improved_last() const { return improved_last_; }

private:
    std::size_t patience_;
    std::size_t max_epochs_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    double best_loss_;
    bool improved_last_ = false;
};

class TrainingError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct EpochRecord
{
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double wall_seconds = 0.0;
};

struct TrainingLog
{
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 1-based, 0 when empty

    // TSV with header "epoch train_loss train_acc val_loss val_acc"; wall
    // times are left out so the file is reproducible.
    std::string to_text() const;
    static TrainingLog parse(const std::string& text);
};

struct TrainOptions
{
    // Called after every epoch, e.g. for progress output.
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult
{
    Checkpoint checkpoint;  // best-val-loss weights plus the config as metadata
    TrainingLog log;
    double best_val_loss = 0.0;
};

/**
 * Mini-batch training with early stopping on validation loss. The train
 * loss reported per epoch is the sample-weighted mean of the batch
 * objectives (data loss + penalty); validation loss is the data loss in eval
 * mode. The model is left holding the best weights.
 */
TrainResult train(Model& model, const EncodedSet& train_set, const EncodedSet& val_set,
                  const TrainOptions& options = {});
TrainResult train(const ExperimentConfig& config, const EncodedSet& train_set, const EncodedSet& val_set,
                  const TrainOptions& options = {});

struct Evaluation
{
    std::vector<std::size_t> predictions;
    double loss = 0.0;  // mean data loss in eval mode
    double accuracy = 0.0;
};

Evaluation evaluate(const Model& model, const EncodedSet& data, std::size_t chunk = 100);
Evaluation evaluate_cached(const Model& model, const Tensor& frozen, const EncodedSet& data,
                           std::size_t chunk = 100);

// Rebuilds the model stored in a training checkpoint (config from metadata).
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Extractor pretraining

struct PretrainConfig
{
    std::string extractor = "small";
    std::size_t input_size = 64;
    std::size_t train_per_class = 200;
    std::size_t probe_per_class = 60;  // for each of probe-train and probe-test
    std::size_t epochs = 10;
    std::size_t batch_size = 10;
    double learning_rate = 0.001;
    std::uint64_t seed = 0;
    SyntheticSpec task{SyntheticTask::shapes};
};

struct PretrainResult
{
    Checkpoint checkpoint;  // "extractor.*" tensors
    std::vector<double> epoch_losses;
    double probe_before = 0.0;  // linear-probe test accuracy, random init
    double probe_after = 0.0;
};

/**
 * Trains the extractor with a global-average-pool softmax head on the
 * surrogate shape task, then measures a linear probe on held-out images.
 */
PretrainResult pretrain_extractor(const PretrainConfig& config,
                                  const std::function<void(std::size_t, double)>& on_epoch = {});

// Global-average-pooled extractor features, [N, C].
Tensor pooled_features(const DenseNetExtractor& extractor, const Tensor& images, std::size_t chunk = 100);

/**
 * Softmax regression on standardised features, fit on (train_x, train_y)
 * with full-batch Adam; returns accuracy on (test_x, test_y).
 */
double linear_probe_accuracy(const Tensor& train_x, std::span<const std::size_t> train_y, const Tensor& test_x,
                             std::span<const std::size_t> test_y, std::size_t num_classes,
                             std::size_t iterations = 300);

// ---------------------------------------------------------------------------
// Hyperparameter search

struct SweepGrid
{
    ExperimentConfig base;
    std::vector<ExperimentKind> experiments;
    std::vector<OptimizerKind> optimizers;
    std::vector<double> learning_rates;
    std::vector<double> dropout_rates;
    std::vector<double> l2_weights;
    std::vector<std::size_t> batch_sizes;
    std::vector<std::size_t> primary_kernels;
    std::vector<std::size_t> primary_strides;
    std::vector<std::size_t> unfrozen_layers;

    // Every domain at its full tuning-grid extent, for one experiment.
    static SweepGrid full(const ExperimentConfig& base);
    std::size_t size() const;
    // Mixed-radix decoding of a grid index.
    ExperimentConfig at(std::size_t index) const;

    // "key = v1, v2, ..." lines for the grid keys; any other key sets `base`.
    static SweepGrid parse(const std::string& text, const ExperimentConfig& defaults = {});
};

struct SweepEntry
{
    std::size_t grid_index = 0;
    ExperimentConfig config;
    double val_macro_f1 = 0.0;
    TrainingLog log;
};

struct SweepResult
{
    std::vector<SweepEntry> ranked;  // descending val macro F1, ties by grid index
    Checkpoint winner;

    std::string ranking_text() const;
};

/**
 * Trains `budget` configurations drawn without replacement from the grid
 * (the full grid when budget is empty or covers it) and ranks them by
 * validation macro F1. The draw depends only on `seed`.
 */
SweepResult sweep(const SweepGrid& grid, const EncodedSet& train_set, const EncodedSet& val_set,
                  std::optional<std::size_t> budget, std::uint64_t seed,
                  const std::function<void(const SweepEntry&)>& on_config = {});

std::vector<std::size_t> sweep_indices(std::size_t grid_size, std::optional<std::size_t> budget,
                                       std::uint64_t seed);

}  // namespace hycaps
