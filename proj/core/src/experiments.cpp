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

#include "hycaps/experiments.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "hycaps/ops.hpp"
#include "hycaps/rng.hpp"

namespace hycaps {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out += (i ? ", " : "") + fmt::format("{}", values[i]);
    }
    return out;
}

bool parse_unsigned(const std::string& text, std::uint64_t& out)
{
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end && !text.empty();
}

bool parse_double(const std::string& text, double& out)
{
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end && !text.empty() && std::isfinite(out);
}

template <typename T>
bool contains(const std::vector<T>& values, T v)
{
    return std::find(values.begin(), values.end(), v) != values.end();
}

// Applies `fn` to row chunks of `x` and concatenates the results.
template <typename Fn>
Tensor map_chunks(const Tensor& x, std::size_t chunk, Fn&& fn)
{
    const auto n = x.dim(0);
    if (n <= chunk) {
        return fn(x);
    }
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < n; i += chunk) {
        std::vector<std::size_t> idx(std::min(chunk, n - i));
        std::iota(idx.begin(), idx.end(), i);
        parts.push_back(fn(take_rows(x, idx)));
    }
    return concat(parts, 0);
}

std::vector<std::size_t> argmax_rows(const Tensor& scores)
{
    const auto n = scores.dim(0);
    const auto k = scores.dim(1);
    std::vector<std::size_t> out(n);
    const auto v = scores.values();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (v[i * k + j] > v[i * k + best]) {
                best = j;
            }
        }
        out[i] = best;
    }
    return out;
}

std::size_t count_correct(const std::vector<std::size_t>& pred, std::span<const std::size_t> truth)
{
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        n += pred[i] == truth[i];
    }
    return n;
}

Tensor global_avg_pool(const Tensor& x)
{
    const auto hw = x.dim(2) * x.dim(3);
    return scale(sum_axis(reshape(x, {x.dim(0), x.dim(1), hw}), 2), 1.0 / static_cast<double>(hw));
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(ExperimentKind kind)
{
    switch (kind) {
    case ExperimentKind::baseline: return "baseline";
    case ExperimentKind::frozen_hybrid: return "frozen_hybrid";
    case ExperimentKind::unfrozen_hybrid: return "unfrozen_hybrid";
    }
    return "?";
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "rmsprop"; }

ExperimentKind parse_experiment(const std::string& text)
{
    for (auto k : {ExperimentKind::baseline, ExperimentKind::frozen_hybrid, ExperimentKind::unfrozen_hybrid}) {
        if (text == to_string(k)) {
            return k;
        }
    }
    throw std::invalid_argument("unknown experiment '" + text +
                                "' (expected baseline, frozen_hybrid or unfrozen_hybrid)");
}

OptimizerKind parse_optimizer(const std::string& text)
{
    if (text == "adam") {
        return OptimizerKind::adam;
    }
    if (text == "rmsprop") {
        return OptimizerKind::rmsprop;
    }
    throw std::invalid_argument("unknown optimizer '" + text + "' (expected adam or rmsprop)");
}

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument([&] {
          std::string msg = fmt::format("invalid configuration ({} problem{}):", problems.size(),
                                        problems.size() == 1 ? "" : "s");
          for (const auto& p : problems) {
              msg += "\n  - " + p;
          }
          return msg;
      }()),
      problems_(std::move(problems))
{
}

std::size_t ExperimentConfig::effective_unfrozen_layers() const
{
    return experiment == ExperimentKind::frozen_hybrid ? 0 : unfrozen_layers;
}

const std::vector<double>& GridDomains::learning_rates()
{
    static const std::vector<double> v = {0.01, 0.0001, 0.00001};
    return v;
}

const std::vector<double>& GridDomains::dropout_rates()
{
    static const std::vector<double> v = {0.4, 0.6, 0.8};
    return v;
}

const std::vector<double>& GridDomains::l2_weights()
{
    static const std::vector<double> v = {0.001, 0.0001, 0.00001};
    return v;
}

const std::vector<std::size_t>& GridDomains::batch_sizes()
{
    static const std::vector<std::size_t> v = {50, 100, 150};
    return v;
}

const std::vector<std::size_t>& GridDomains::primary_kernels()
{
    static const std::vector<std::size_t> v = {2, 3, 5};
    return v;
}

const std::vector<std::size_t>& GridDomains::primary_strides()
{
    static const std::vector<std::size_t> v = {1, 2};
    return v;
}

const std::vector<std::size_t>& GridDomains::unfrozen_layers()
{
    static const std::vector<std::size_t> v = {10, 20, 30};
    return v;
}

ExtractorSpec extractor_preset(const std::string& name)
{
    if (name == "densenet121") {
        return ExtractorSpec::densenet121();
    }
    ExtractorSpec s;
    if (name == "tiny") {
        s.stem_channels = 8;
        s.stem_kernel = 3;
        s.stem_stride = 2;
        s.block_layers = {2, 2};
        s.growth_rate = 8;
        s.bottleneck = false;
        return s;
    }
    if (name == "small") {
        s.stem_channels = 16;
        s.stem_kernel = 5;
        s.stem_stride = 2;
        s.stem_pool = true;
        s.block_layers = {6, 6};
        s.growth_rate = 12;
        s.bottleneck = true;
        return s;
    }
    throw std::invalid_argument("unknown extractor '" + name + "' (expected tiny, small or densenet121)");
}

std::vector<std::string> validate(const ExperimentConfig& c)
{
    std::vector<std::string> p;
    auto in_domain = [&](const char* key, auto value, const auto& domain) {
        if (c.grid_domains && !contains(domain, value)) {
            p.push_back(fmt::format("{}={} is not in the tuning grid {{{}}}", key, value, join(domain)));
        }
    };
    if (c.max_epochs < 1) {
        p.push_back("max_epochs must be >= 1");
    }
    if (c.early_stop_patience < 1) {
        p.push_back("early_stop_patience must be >= 1");
    }
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
        p.push_back(fmt::format("learning_rate={} must be a finite non-negative number", c.learning_rate));
    } else {
        in_domain("learning_rate", c.learning_rate, GridDomains::learning_rates());
    }
    if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) {
        p.push_back(fmt::format("dropout_rate={} must lie in [0, 1)", c.dropout_rate));
    } else {
        in_domain("dropout_rate", c.dropout_rate, GridDomains::dropout_rates());
    }
    if (!(c.l2_weight >= 0.0) || !std::isfinite(c.l2_weight)) {
        p.push_back(fmt::format("l2_weight={} must be a finite non-negative number", c.l2_weight));
    } else {
        in_domain("l2_weight", c.l2_weight, GridDomains::l2_weights());
    }
    if (c.batch_size < 1) {
        p.push_back("batch_size must be >= 1");
    } else {
        in_domain("batch_size", c.batch_size, GridDomains::batch_sizes());
    }
    if (!contains(GridDomains::primary_kernels(), c.primary_kernel)) {
        p.push_back(fmt::format("primary_kernel={} is not one of {{{}}}", c.primary_kernel,
                                join(GridDomains::primary_kernels())));
    }
    if (!contains(GridDomains::primary_strides(), c.primary_stride)) {
        p.push_back(fmt::format("primary_stride={} is not one of {{{}}}", c.primary_stride,
                                join(GridDomains::primary_strides())));
    }
    if (c.experiment != ExperimentKind::frozen_hybrid) {
        in_domain("unfrozen_layers", c.unfrozen_layers, GridDomains::unfrozen_layers());
    }
    if (c.num_classes < 2) {
        p.push_back("num_classes must be >= 2");
    }
    if (c.hidden_units < 1 || c.capsule_channels < 1 || c.capsule_dim < 1 || c.class_capsule_dim < 1) {
        p.push_back("hidden_units, capsule_channels, capsule_dim and class_capsule_dim must be >= 1");
    }
    if (c.routing_iters < 1) {
        p.push_back("routing_iters must be >= 1");
    }
    try {
        const auto spec = extractor_preset(c.extractor);
        if (c.input_size < spec.stem_kernel) {
            p.push_back(fmt::format("input_size={} is smaller than the stem kernel", c.input_size));
        } else if (c.experiment != ExperimentKind::baseline) {
            const auto fs = spec.output_size(c.input_size);
            if (fs < c.primary_kernel) {
                p.push_back(fmt::format("input_size={} leaves a {}x{} feature map, smaller than primary_kernel={}",
                                        c.input_size, fs, fs, c.primary_kernel));
            }
        }
    } catch (const std::invalid_argument& e) {
        p.push_back(e.what());
    }
    return p;
}

void validate_or_throw(const ExperimentConfig& config)
{
    auto problems = validate(config);
    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
}

const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys = {
        "experiment",     "optimizer",        "learning_rate",     "max_epochs",   "early_stop_patience",
        "dropout_rate",   "l2_weight",        "batch_size",        "primary_kernel", "primary_stride",
        "unfrozen_layers", "seed",            "extractor",         "input_size",   "num_classes",
        "hidden_units",   "capsule_channels", "capsule_dim",       "class_capsule_dim", "routing_iters",
        "pretrained",     "grid_domains",
    };
    return keys;
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& raw,
                      std::vector<std::string>& problems)
{
    const auto value = trim(raw);
    auto bad = [&](const char* what) { problems.push_back(fmt::format("{}='{}' is not {}", key, value, what)); };
    auto set_size = [&](std::size_t& field) {
        std::uint64_t v = 0;
        if (parse_unsigned(value, v)) {
            field = static_cast<std::size_t>(v);
        } else {
            bad("a non-negative integer");
        }
    };
    auto set_double = [&](double& field) {
        double v = 0;
        if (parse_double(value, v)) {
            field = v;
        } else {
            bad("a finite number");
        }
    };
    try {
        if (key == "experiment") {
            c.experiment = parse_experiment(value);
        } else if (key == "optimizer") {
            c.optimizer = parse_optimizer(value);
        } else if (key == "learning_rate") {
            set_double(c.learning_rate);
        } else if (key == "max_epochs") {
            set_size(c.max_epochs);
        } else if (key == "early_stop_patience") {
            set_size(c.early_stop_patience);
        } else if (key == "dropout_rate") {
            set_double(c.dropout_rate);
        } else if (key == "l2_weight") {
            set_double(c.l2_weight);
        } else if (key == "batch_size") {
            set_size(c.batch_size);
        } else if (key == "primary_kernel") {
            set_size(c.primary_kernel);
        } else if (key == "primary_stride") {
            set_size(c.primary_stride);
        } else if (key == "unfrozen_layers") {
            set_size(c.unfrozen_layers);
        } else if (key == "seed") {
            std::uint64_t v = 0;
            if (parse_unsigned(value, v)) {
                c.seed = v;
            } else {
                bad("a non-negative integer");
            }
        } else if (key == "extractor") {
            c.extractor = value;
        } else if (key == "input_size") {
            set_size(c.input_size);
        } else if (key == "num_classes") {
            set_size(c.num_classes);
        } else if (key == "hidden_units") {
            set_size(c.hidden_units);
        } else if (key == "capsule_channels") {
            set_size(c.capsule_channels);
        } else if (key == "capsule_dim") {
            set_size(c.capsule_dim);
        } else if (key == "class_capsule_dim") {
            set_size(c.class_capsule_dim);
        } else if (key == "routing_iters") {
            set_size(c.routing_iters);
        } else if (key == "pretrained") {
            c.pretrained = value;
        } else if (key == "grid_domains") {
            if (value == "true" || value == "1") {
                c.grid_domains = true;
            } else if (value == "false" || value == "0") {
                c.grid_domains = false;
            } else {
                bad("a boolean");
            }
        } else {
            problems.push_back("unknown key '" + key + "'");
        }
    } catch (const std::invalid_argument& e) {
        problems.push_back(key + ": " + e.what());
    }
}

std::string get_config_value(const ExperimentConfig& c, const std::string& key)
{
    if (key == "experiment") return to_string(c.experiment);
    if (key == "optimizer") return to_string(c.optimizer);
    if (key == "learning_rate") return fmt::format("{}", c.learning_rate);
    if (key == "max_epochs") return std::to_string(c.max_epochs);
    if (key == "early_stop_patience") return std::to_string(c.early_stop_patience);
    if (key == "dropout_rate") return fmt::format("{}", c.dropout_rate);
    if (key == "l2_weight") return fmt::format("{}", c.l2_weight);
    if (key == "batch_size") return std::to_string(c.batch_size);
    if (key == "primary_kernel") return std::to_string(c.primary_kernel);
    if (key == "primary_stride") return std::to_string(c.primary_stride);
    if (key == "unfrozen_layers") return std::to_string(c.effective_unfrozen_layers());
    if (key == "seed") return std::to_string(c.seed);
    if (key == "extractor") return c.extractor;
    if (key == "input_size") return std::to_string(c.input_size);
    if (key == "num_classes") return std::to_string(c.num_classes);
    if (key == "hidden_units") return std::to_string(c.hidden_units);
    if (key == "capsule_channels") return std::to_string(c.capsule_channels);
    if (key == "capsule_dim") return std::to_string(c.capsule_dim);
    if (key == "class_capsule_dim") return std::to_string(c.class_capsule_dim);
    if (key == "routing_iters") return std::to_string(c.routing_iters);
    if (key == "pretrained") return c.pretrained;
    if (key == "grid_domains") return c.grid_domains ? "true" : "false";
    throw std::invalid_argument("unknown key '" + key + "'");
}

namespace {

void parse_lines(const std::string& text,
                 const std::function<void(std::size_t, const std::string&, const std::string&)>& on_pair,
                 std::vector<std::string>& problems)
{
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back(fmt::format("line {}: expected key = value", line_no));
            continue;
        }
        on_pair(line_no, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

}  // namespace

void bind_config_text(ExperimentConfig& config, const std::string& text, std::vector<std::string>& problems)
{
    parse_lines(
        text, [&](std::size_t, const std::string& k, const std::string& v) { set_config_value(config, k, v, problems); },
        problems);
}

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& defaults)
{
    ExperimentConfig c = defaults;
    std::vector<std::string> problems;
    bind_config_text(c, text, problems);
    for (auto& p : validate(c)) {
        problems.push_back(std::move(p));
    }
    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
    if (c.experiment == ExperimentKind::frozen_hybrid) {
        c.unfrozen_layers = 0;
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& defaults)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), defaults);
}

std::string format_config(const ExperimentConfig& config)
{
    std::string out;
    for (const auto& key : config_keys()) {
        out += key + " = " + get_config_value(config, key) + "\n";
    }
    return out;
}

void apply_env_overrides(ExperimentConfig& config, std::vector<std::string>& problems,
                         const std::map<std::string, std::string>* env)
{
    for (const auto& key : config_keys()) {
        std::string name = kEnvPrefix;
        for (char ch : key) {
            name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        }
        if (env != nullptr) {
            if (auto it = env->find(name); it != env->end()) {
                set_config_value(config, key, it->second, problems);
            }
        } else if (const char* v = std::getenv(name.c_str())) {
            set_config_value(config, key, v, problems);
        }
    }
}

// ---------------------------------------------------------------------------
// Models

Model::Model(const ExperimentConfig& config, const Checkpoint* pretrained)
    : config_(config), init_rng_(config.seed), extractor_(extractor_preset(config.extractor), init_rng_)
{
    extractor_.register_params(graph_, "extractor");
    if (pretrained != nullptr) {
        restore(graph_, *pretrained, "extractor", true);
    }
    const auto fs = extractor_.output_size(config_.input_size);
    const auto ch = extractor_.out_channels();
    if (config_.experiment == ExperimentKind::baseline) {
        fc1_.emplace(ch * fs * fs, config_.hidden_units, 0.0, init_rng_);
        fc2_.emplace(config_.hidden_units, config_.num_classes, 0.0, init_rng_);
        fc1_->register_params(graph_, "head.fc1");
        fc2_->register_params(graph_, "head.fc2");
    } else {
        PrimaryCapsuleSpec ps{config_.primary_kernel, config_.primary_stride, config_.capsule_channels,
                              config_.capsule_dim};
        primary_.emplace(ch, ps, init_rng_);
        ClassCapsuleSpec cs{config_.num_classes, config_.class_capsule_dim, config_.routing_iters};
        class_caps_.emplace(primary_->capsule_count(fs), config_.capsule_dim, cs, init_rng_);
        primary_->register_params(graph_, "capsules.primary");
        class_caps_->register_params(graph_, "capsules.class");
    }
    set_trainable(graph_, LayerSelection::all("extractor"), false);
    const auto k = std::min(config_.effective_unfrozen_layers(), graph_.layers_in("extractor").size());
    if (k > 0) {
        set_trainable(graph_, LayerSelection::last(k, "extractor"), true);
    }
}

std::size_t Model::frozen_stages() const { return extractor_.first_trainable_stage(graph_); }

Tensor Model::frozen_features(const Tensor& images) const
{
    NoGradGuard guard;
    const auto end = frozen_stages();
    if (end == 0) {
        return images;
    }
    return map_chunks(images, 100, [&](const Tensor& x) { return extractor_.forward_range(x, 0, end); });
}

Tensor Model::forward_from(const Tensor& frozen, Mode mode, std::uint64_t dropout_seed) const
{
    Tensor f = extractor_.forward_range(frozen, frozen_stages(), extractor_.stage_count());
    if (config_.experiment == ExperimentKind::baseline) {
        Tensor h = relu(fc1_->forward(flatten(f)).output);
        h = dropout(h, config_.dropout_keep(), mode, dropout_seed);
        return fc2_->forward(h).output;
    }
    if (config_.experiment == ExperimentKind::unfrozen_hybrid) {
        f = dropout(f, config_.dropout_keep(), mode, dropout_seed);
    }
    return class_caps_->forward(primary_->forward(f));
}

Tensor Model::forward(const Tensor& images, Mode mode, std::uint64_t dropout_seed) const
{
    return forward_from(frozen_features(images), mode, dropout_seed);
}

Tensor Model::class_scores(const Tensor& head) const
{
    return is_hybrid() ? capsule_lengths(head) : softmax(head, 1);
}

Tensor Model::data_loss(const Tensor& head, const Tensor& targets) const
{
    return is_hybrid() ? margin_loss(head, targets) : cross_entropy(head, targets);
}

Tensor Model::penalty() const
{
    Tensor total = Tensor::scalar(0.0);
    if (config_.l2_weight == 0.0) {
        return total;
    }
    for (const auto& w : graph_.regularized_weights()) {
        total = add(total, sum(square(w)));
    }
    return scale(total, config_.l2_weight);
}

std::vector<std::size_t> Model::predict(const Tensor& head) const
{
    return is_hybrid() ? capsule_predict(head) : argmax_rows(head);
}

std::unique_ptr<Model> build_model(const ExperimentConfig& config, const Checkpoint* pretrained)
{
    validate_or_throw(config);
    if (pretrained == nullptr && !config.pretrained.empty()) {
        const auto ckpt = load_checkpoint(config.pretrained);
        return std::make_unique<Model>(config, &ckpt);
    }
    return std::make_unique<Model>(config, pretrained);
}

// ---------------------------------------------------------------------------
// Optimisation

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerKind kind, double learning_rate)
    : params_(std::move(params)), kind_(kind), lr_(learning_rate)
{
    for (const auto& p : params_) {
        m_.emplace_back(kind_ == OptimizerKind::adam ? p.numel() : 0, 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Optimizer::step()
{
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(adam.beta1, t);
    const double bc2 = 1.0 - std::pow(adam.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.requires_grad()) {
            continue;
        }
        if (!p.has_grad()) {
            throw std::logic_error(fmt::format("optimizer: trainable parameter #{} (shape {}) has no gradient", i,
                                               shape_str(p.shape())));
        }
        const auto g = p.grad();
        auto w = p.data();
        auto& v = v_[i];
        if (kind_ == OptimizerKind::adam) {
            auto& m = m_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g[k];
                v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g[k] * g[k];
                w[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + adam.eps);
            }
        } else {
            for (std::size_t k = 0; k < w.size(); ++k) {
                v[k] = rmsprop.decay * v[k] + (1.0 - rmsprop.decay) * g[k] * g[k];
                w[k] -= lr_ * g[k] / (std::sqrt(v[k]) + rmsprop.eps);
            }
        }
    }
}

EarlyStopping::EarlyStopping(std::size_t patience, std::size_t max_epochs)
    : patience_(patience), max_epochs_(max_epochs), best_loss_(std::numeric_limits<double>::infinity())
{
    if (patience_ < 1 || max_epochs_ < 1) {
        throw std::invalid_argument("early stopping needs patience >= 1 and max_epochs >= 1");
    }
}

bool EarlyStopping::update(double val_loss)
{
    ++epoch_;
    // the first epoch is the initial best even when its loss is not finite
    improved_last_ = best_epoch_ == 0 || val_loss < best_loss_ || (std::isnan(best_loss_) && !std::isnan(val_loss));
    if (improved_last_) {
        best_loss_ = val_loss;
        best_epoch_ = epoch_;
    }
    return epoch_ >= max_epochs_ || epoch_ - best_epoch_ >= patience_;
}

std::string TrainingLog::to_text() const
{
    std::string out = "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n";
    for (const auto& e : epochs) {
        out += fmt::format("{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\n", e.epoch, e.train_loss, e.train_acc,
                           e.val_loss, e.val_acc);
    }
    out += fmt::format("#best_epoch\t{}\n", best_epoch);
    return out;
}

TrainingLog TrainingLog::parse(const std::string& text)
{
    TrainingLog log;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        if (header) {
            header = false;
            if (line.rfind("epoch\t", 0) != 0) {
                throw std::invalid_argument("training log lacks its header");
            }
            continue;
        }
        std::istringstream fields(line);
        if (line.rfind("#best_epoch\t", 0) == 0) {
            std::string tag;
            fields >> tag >> log.best_epoch;
            continue;
        }
        EpochRecord r;
        if (!(fields >> r.epoch >> r.train_loss >> r.train_acc >> r.val_loss >> r.val_acc)) {
            throw std::invalid_argument("malformed training log row: " + line);
        }
        log.epochs.push_back(r);
    }
    return log;
}

Evaluation evaluate_cached(const Model& model, const Tensor& frozen, const EncodedSet& data, std::size_t chunk)
{
    NoGradGuard guard;
    const auto n = data.labels.size();
    if (n == 0) {
        throw std::invalid_argument("evaluate: empty data set");
    }
    Evaluation ev;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; i += chunk) {
        std::vector<std::size_t> idx(std::min(chunk, n - i));
        std::iota(idx.begin(), idx.end(), i);
        const Tensor head = model.forward_from(take_rows(frozen, idx), Mode::eval, 0);
        loss += model.data_loss(head, take_rows(data.targets, idx)).item() * static_cast<double>(idx.size());
        const auto pred = model.predict(head);
        ev.predictions.insert(ev.predictions.end(), pred.begin(), pred.end());
    }
    ev.loss = loss / static_cast<double>(n);
    ev.accuracy = static_cast<double>(count_correct(ev.predictions, data.labels)) / static_cast<double>(n);
    return ev;
}

Evaluation evaluate(const Model& model, const EncodedSet& data, std::size_t chunk)
{
    return evaluate_cached(model, model.frozen_features(data.images), data, chunk);
}

TrainResult train(Model& model, const EncodedSet& train_set, const EncodedSet& val_set, const TrainOptions& options)
{
    const auto& cfg = model.config();
    const auto n = train_set.labels.size();
    if (n == 0 || val_set.labels.empty()) {
        throw std::invalid_argument("train: empty training or validation set");
    }
    const Tensor train_frozen = model.frozen_features(train_set.images);
    const Tensor val_frozen = model.frozen_features(val_set.images);
    Optimizer opt(model.graph().trainable_parameters(), cfg.optimizer, cfg.learning_rate);
    EarlyStopping stopper(cfg.early_stop_patience, cfg.max_epochs);

    TrainResult result;
    Checkpoint best;
    for (std::size_t epoch = 1;; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t correct = 0;
        const auto batches = batch_indices(n, cfg.batch_size, true, cfg.seed, epoch);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& idx = batches[b];
            model.graph().zero_grad();
            const Tensor head =
                model.forward_from(take_rows(train_frozen, idx), Mode::train, Rng::mix(cfg.seed ^ (epoch << 32) ^ b));
            const Tensor loss = add(model.data_loss(head, take_rows(train_set.targets, idx)), model.penalty());
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw TrainingError(fmt::format("non-finite training loss ({}) at epoch {} batch {}", value, epoch,
                                                b + 1));
            }
            if (loss.requires_grad()) {
                backward(loss);
                opt.step();
            }
            loss_sum += value * static_cast<double>(idx.size());
            const auto pred = model.predict(head);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                correct += pred[i] == train_set.labels[idx[i]];
            }
        }
        const auto val = evaluate_cached(model, val_frozen, val_set);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        rec.val_loss = val.loss;
        rec.val_acc = val.accuracy;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(rec);
        const bool stop = stopper.update(val.loss);
        if (stopper.best_epoch() == epoch) {
            best = snapshot(model.graph());
        }
        if (options.on_epoch) {
            options.on_epoch(rec);
        }
        if (stop) {
            break;
        }
    }
    restore(model.graph(), best);
    result.log.best_epoch = stopper.best_epoch();
    result.best_val_loss = stopper.best_loss();
    result.checkpoint = std::move(best);
    result.checkpoint.metadata["kind"] = "model";
    result.checkpoint.metadata["config"] = format_config(cfg);
    result.checkpoint.metadata["best_epoch"] = std::to_string(result.log.best_epoch);
    result.checkpoint.metadata["best_val_loss"] = fmt::format("{:.17g}", result.best_val_loss);
    return result;
}

TrainResult train(const ExperimentConfig& config, const EncodedSet& train_set, const EncodedSet& val_set,
                  const TrainOptions& options)
{
    auto model = build_model(config);
    return train(*model, train_set, val_set, options);
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt)
{
    auto it = ckpt.metadata.find("config");
    if (it == ckpt.metadata.end()) {
        throw CheckpointError("checkpoint carries no model config");
    }
    auto config = parse_config(it->second);
    auto model = std::make_unique<Model>(config);
    restore(model->graph(), ckpt);
    return model;
}

// ---------------------------------------------------------------------------
// Extractor pretraining

Tensor pooled_features(const DenseNetExtractor& extractor, const Tensor& images, std::size_t chunk)
{
    NoGradGuard guard;
    return map_chunks(images, chunk, [&](const Tensor& x) { return global_avg_pool(extractor.forward(x)); });
}

double linear_probe_accuracy(const Tensor& train_x, std::span<const std::size_t> train_y, const Tensor& test_x,
                             std::span<const std::size_t> test_y, std::size_t num_classes, std::size_t iterations)
{
    const auto n = train_x.dim(0);
    const auto d = train_x.dim(1);
    std::vector<double> mu(d, 0.0);
    std::vector<double> sd(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            mu[k] += train_x[i * d + k] / static_cast<double>(n);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            const double z = train_x[i * d + k] - mu[k];
            sd[k] += z * z / static_cast<double>(n);
        }
    }
    for (auto& s : sd) {
        s = s > 1e-24 ? std::sqrt(s) : 1.0;
    }
    auto standardise = [&](const Tensor& x) {
        std::vector<double> v(x.values().begin(), x.values().end());
        for (std::size_t i = 0; i < x.dim(0); ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                v[i * d + k] = (v[i * d + k] - mu[k]) / sd[k];
            }
        }
        return Tensor({x.dim(0), d}, std::move(v));
    };
    const Tensor xs = standardise(train_x);
    const Tensor xt = standardise(test_x);
    const Tensor y = one_hot(train_y, num_classes);
    Tensor w = Tensor::zeros({d, num_classes}, true);
    Tensor b = Tensor::zeros({num_classes}, true);
    Optimizer opt({w, b}, OptimizerKind::adam, 0.05);
    for (std::size_t it = 0; it < iterations; ++it) {
        w.zero_grad();
        b.zero_grad();
        const Tensor loss = add(cross_entropy(add(matmul(xs, w), b), y), scale(sum(square(w)), 1e-3));
        backward(loss);
        opt.step();
    }
    NoGradGuard guard;
    const auto pred = argmax_rows(add(matmul(xt, w), b));
    return static_cast<double>(count_correct(pred, test_y)) / static_cast<double>(test_y.size());
}

PretrainResult pretrain_extractor(const PretrainConfig& config, const std::function<void(std::size_t, double)>& on_epoch)
{
    Rng rng(config.seed);
    DenseNetExtractor extractor(extractor_preset(config.extractor), rng);
    ModelGraph graph;
    extractor.register_params(graph, "extractor");
    const auto num_classes = synthetic_class_names(config.task.task).size();
    FullyConnected head(extractor.out_channels(), num_classes, 0.0, rng);
    head.register_params(graph, "pretrain.fc");

    SyntheticSpec task = config.task;
    task.image_size = config.input_size;
    const auto train_set = normalize_encode(generate_samples(task, config.train_per_class, Rng::derive(config.seed, 1).next_u64()), num_classes);
    const auto probe_train = normalize_encode(generate_samples(task, config.probe_per_class, Rng::derive(config.seed, 2).next_u64()), num_classes);
    const auto probe_test = normalize_encode(generate_samples(task, config.probe_per_class, Rng::derive(config.seed, 3).next_u64()), num_classes);

    auto probe = [&] {
        return linear_probe_accuracy(pooled_features(extractor, probe_train.images), probe_train.labels,
                                     pooled_features(extractor, probe_test.images), probe_test.labels, num_classes);
    };

    PretrainResult result;
    result.probe_before = probe();
    Optimizer opt(graph.trainable_parameters(), OptimizerKind::adam, config.learning_rate);
    const auto n = train_set.labels.size();
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        double loss_sum = 0.0;
        const auto batches = batch_indices(n, config.batch_size, true, config.seed, epoch);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            graph.zero_grad();
            const Tensor x = take_rows(train_set.images, batches[b]);
            const Tensor logits = head.forward(global_avg_pool(extractor.forward(x))).output;
            const Tensor loss = cross_entropy(logits, take_rows(train_set.targets, batches[b]));
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw TrainingError(fmt::format("pretraining diverged: non-finite loss at epoch {} batch {}", epoch,
                                                b + 1));
            }
            backward(loss);
            opt.step();
            loss_sum += value * static_cast<double>(batches[b].size());
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(n));
        if (on_epoch) {
            on_epoch(epoch, result.epoch_losses.back());
        }
    }
    result.probe_after = probe();
    result.checkpoint = snapshot(graph, "extractor");
    result.checkpoint.metadata["kind"] = "extractor";
    result.checkpoint.metadata["extractor"] = config.extractor;
    result.checkpoint.metadata["input_size"] = std::to_string(config.input_size);
    result.checkpoint.metadata["epochs"] = std::to_string(config.epochs);
    result.checkpoint.metadata["seed"] = std::to_string(config.seed);
    result.checkpoint.metadata["probe_before"] = fmt::format("{:.17g}", result.probe_before);
    result.checkpoint.metadata["probe_after"] = fmt::format("{:.17g}", result.probe_after);
    return result;
}

// ---------------------------------------------------------------------------
// Hyperparameter search

SweepGrid SweepGrid::full(const ExperimentConfig& base)
{
    SweepGrid g;
    g.base = base;
    g.experiments = {base.experiment};
    g.optimizers = {OptimizerKind::adam, OptimizerKind::rmsprop};
    g.learning_rates = GridDomains::learning_rates();
    g.dropout_rates = GridDomains::dropout_rates();
    g.l2_weights = GridDomains::l2_weights();
    g.batch_sizes = GridDomains::batch_sizes();
    g.primary_kernels = GridDomains::primary_kernels();
    g.primary_strides = GridDomains::primary_strides();
    g.unfrozen_layers = GridDomains::unfrozen_layers();
    // keys the experiment ignores collapse to one value
    if (base.experiment == ExperimentKind::baseline) {
        g.primary_kernels = {base.primary_kernel};
        g.primary_strides = {base.primary_stride};
    }
    if (base.experiment == ExperimentKind::frozen_hybrid) {
        g.unfrozen_layers = {0};
    }
    return g;
}

std::size_t SweepGrid::size() const
{
    return experiments.size() * optimizers.size() * learning_rates.size() * dropout_rates.size() *
           l2_weights.size() * batch_sizes.size() * primary_kernels.size() * primary_strides.size() *
           unfrozen_layers.size();
}

ExperimentConfig SweepGrid::at(std::size_t index) const
{
    if (index >= size()) {
        throw std::out_of_range(fmt::format("grid index {} out of range (grid size {})", index, size()));
    }
    ExperimentConfig c = base;
    auto digit = [&](const auto& domain) {
        const auto& v = domain[index % domain.size()];
        index /= domain.size();
        return v;
    };
    // last key varies fastest
    c.unfrozen_layers = digit(unfrozen_layers);
    c.primary_stride = digit(primary_strides);
    c.primary_kernel = digit(primary_kernels);
    c.batch_size = digit(batch_sizes);
    c.l2_weight = digit(l2_weights);
    c.dropout_rate = digit(dropout_rates);
    c.learning_rate = digit(learning_rates);
    c.optimizer = digit(optimizers);
    c.experiment = digit(experiments);
    if (c.experiment == ExperimentKind::frozen_hybrid) {
        c.unfrozen_layers = 0;
    }
    return c;
}

SweepGrid SweepGrid::parse(const std::string& text, const ExperimentConfig& defaults)
{
    SweepGrid g;
    g.base = defaults;
    std::vector<std::string> problems;
    std::map<std::string, std::vector<std::string>> lists;
    static const std::vector<std::string> grid_keys = {"experiment",     "optimizer",      "learning_rate",
                                                       "dropout_rate",   "l2_weight",      "batch_size",
                                                       "primary_kernel", "primary_stride", "unfrozen_layers"};
    parse_lines(
        text,
        [&](std::size_t line, const std::string& k, const std::string& v) {
            if (contains(grid_keys, k)) {
                lists[k] = split_list(v);
                if (lists[k].empty()) {
                    problems.push_back(fmt::format("line {}: '{}' lists no values (empty grid)", line, k));
                }
            } else {
                set_config_value(g.base, k, v, problems);
            }
        },
        problems);
    for (const auto& key : grid_keys) {
        if (!lists.count(key)) {
            lists[key] = {get_config_value(g.base, key)};
        }
    }
    // each value is parsed through a scratch config so errors read the same
    auto collect = [&](const std::string& key, auto& out, auto field) {
        for (const auto& v : lists[key]) {
            ExperimentConfig scratch = g.base;
            const auto before = problems.size();
            set_config_value(scratch, key, v, problems);
            if (problems.size() == before) {
                out.push_back(scratch.*field);
            }
        }
    };
    collect("experiment", g.experiments, &ExperimentConfig::experiment);
    collect("optimizer", g.optimizers, &ExperimentConfig::optimizer);
    collect("learning_rate", g.learning_rates, &ExperimentConfig::learning_rate);
    collect("dropout_rate", g.dropout_rates, &ExperimentConfig::dropout_rate);
    collect("l2_weight", g.l2_weights, &ExperimentConfig::l2_weight);
    collect("batch_size", g.batch_sizes, &ExperimentConfig::batch_size);
    collect("primary_kernel", g.primary_kernels, &ExperimentConfig::primary_kernel);
    collect("primary_stride", g.primary_strides, &ExperimentConfig::primary_stride);
    collect("unfrozen_layers", g.unfrozen_layers, &ExperimentConfig::unfrozen_layers);
    if (problems.empty()) {
        if (g.size() == 0) {
            problems.push_back("empty grid");
        }
        // every combination of the listed values must be a valid config
        for (std::size_t i = 0; i < g.size() && problems.empty(); ++i) {
            for (auto& p : validate(g.at(i))) {
                if (!contains(problems, p)) {
                    problems.push_back(p);
                }
            }
        }
    }
    if (!problems.empty()) {
        throw ConfigError(std::move(problems));
    }
    return g;
}

std::vector<std::size_t> sweep_indices(std::size_t grid_size, std::optional<std::size_t> budget, std::uint64_t seed)
{
    if (grid_size == 0) {
        throw std::invalid_argument("sweep: empty grid");
    }
    if (budget && *budget < 1) {
        throw std::invalid_argument("sweep: budget must be >= 1");
    }
    std::vector<std::size_t> all(grid_size);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (!budget || *budget >= grid_size) {
        return all;
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < *budget; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(grid_size - i));
        std::swap(all[i], all[j]);
    }
    all.resize(*budget);
    std::sort(all.begin(), all.end());
    return all;
}

SweepResult sweep(const SweepGrid& grid, const EncodedSet& train_set, const EncodedSet& val_set,
                  std::optional<std::size_t> budget, std::uint64_t seed,
                  const std::function<void(const SweepEntry&)>& on_config)
{
    SweepResult result;
    double best_f1 = -1.0;
    const auto num_classes = val_set.targets.dim(1);
    for (const auto index : sweep_indices(grid.size(), budget, seed)) {
        SweepEntry entry;
        entry.grid_index = index;
        entry.config = grid.at(index);
        auto model = build_model(entry.config);
        auto trained = train(*model, train_set, val_set);
        const auto ev = evaluate(*model, val_set);
        entry.val_macro_f1 =
            compute_report(confusion(val_set.labels, ev.predictions, num_classes)).macro_avg.f1;
        entry.log = std::move(trained.log);
        if (entry.val_macro_f1 > best_f1) {
            best_f1 = entry.val_macro_f1;
            result.winner = std::move(trained.checkpoint);
        }
        if (on_config) {
            on_config(entry);
        }
        result.ranked.push_back(std::move(entry));
    }
    std::stable_sort(result.ranked.begin(), result.ranked.end(), [](const auto& a, const auto& b) {
        return a.val_macro_f1 > b.val_macro_f1;
    });
    return result;
}

std::string SweepResult::ranking_text() const
{
    std::string out =
        "rank\tgrid_index\tval_macro_f1\texperiment\toptimizer\tlearning_rate\tdropout_rate\tl2_weight\t"
        "batch_size\tprimary_kernel\tprimary_stride\tunfrozen_layers\tbest_epoch\n";
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto& e = ranked[r];
        const auto& c = e.config;
        out += fmt::format("{}\t{}\t{:.17g}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", r + 1, e.grid_index,
                           e.val_macro_f1, to_string(c.experiment), to_string(c.optimizer), c.learning_rate,
                           c.dropout_rate, c.l2_weight, c.batch_size, c.primary_kernel, c.primary_stride,
                           c.effective_unfrozen_layers(), e.log.best_epoch);
    }
    return out;
}

}  // namespace hycaps
