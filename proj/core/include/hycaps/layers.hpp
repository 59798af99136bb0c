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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "hycaps/rng.hpp"
#include "hycaps/tensor.hpp"

namespace hycaps {

enum class Mode
{
    train,
    eval,
};

enum class LayerKind
{
    conv2d,
    dense_block,
    transition,
    avg_pool,
    max_pool,
    flatten,
    fully_connected,
    dropout,
};

std::string_view to_string(LayerKind kind);

struct DenseBlockSpec
{
    std::size_t num_layers = 4;
    std::size_t growth_rate = 12;
    bool bottleneck = false;

    std::size_t output_channels(std::size_t input_channels) const
    {
        return input_channels + num_layers * growth_rate;
    }
};

// Declarative description of one layer. Only the fields relevant to `kind`
// are read; validate() enforces the ranges.
struct LayerSpec
{
    LayerKind kind = LayerKind::conv2d;
    std::size_t kernel_size = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t out_channels = 0;  // conv2d, transition
    std::size_t units = 0;         // fully_connected
    DenseBlockSpec block;          // dense_block
    double keep_prob = 1.0;        // dropout
    double l2_weight = 0.0;        // fully_connected
    bool trainable = true;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Differentiable layer ops

// [N,C,H,W] * [K,C,kh,kw] (+ bias [K]) -> [N,K,H',W'], H' = (H+2p-kh)/s + 1.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              std::size_t stride, std::size_t padding);
inline Tensor conv2d(const Tensor& input, const Tensor& weights, std::size_t stride,
                     std::size_t padding)
{
    return conv2d(input, weights, Tensor{}, stride, padding);
}

Tensor avg_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride);
// Padding is treated as -inf.
Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride,
                  std::size_t padding = 0);

struct FullyConnectedResult
{
    Tensor output;   // [N,U]
    Tensor penalty;  // [1], l2_weight * sum(weights^2)
};

FullyConnectedResult fully_connected(const Tensor& input, const Tensor& weights,
                                     const Tensor& bias, double l2_weight);

// Inverted dropout: survivors are scaled by 1/keep_prob. Eval mode is identity.
Tensor dropout(const Tensor& input, double keep_prob, Mode mode, std::uint64_t seed);

// He-uniform initialisation, bound sqrt(6 / fan_in).
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

// ---------------------------------------------------------------------------
// Parameter registry

// A named parameterized sublayer. This is the unit of freeze counting and of
// checkpoint naming ("<layer>.<param>").
struct ParamLayer
{
    std::string name;
    std::vector<std::pair<std::string, Tensor>> params;
    bool trainable = true;
};

class ModelGraph
{
public:
    // Registers params under `name`; they share storage with the caller's
    // handles. Names must be unique.
    void add_layer(std::string name, std::vector<std::pair<std::string, Tensor>> params);

    std::span<ParamLayer> layers() { return layers_; }
    std::span<const ParamLayer> layers() const { return layers_; }
    std::size_t layer_count() const { return layers_.size(); }

    // Indices of layers whose name starts with `prefix`, in registration order.
    std::vector<std::size_t> layers_in(std::string_view prefix) const;

    const ParamLayer* find(std::string_view name) const;

    std::vector<Tensor> parameters() const;
    std::vector<Tensor> trainable_parameters() const;
    // Weight tensors (everything but biases) of trainable layers.
    std::vector<Tensor> regularized_weights() const;
    std::size_t parameter_count() const;

    void zero_grad();

private:
    std::vector<ParamLayer> layers_;
};

struct LayerSelection
{
    enum class Kind
    {
        all,
        last,
        first,
        indices,
    };
    Kind kind = Kind::all;
    std::size_t count = 0;
    std::vector<std::size_t> indices;
    std::string scope;  // name prefix restricting the candidate layers

    static LayerSelection all(std::string scope = {});
    static LayerSelection last(std::size_t k, std::string scope = {});
    static LayerSelection first(std::size_t k, std::string scope = {});
    static LayerSelection explicit_indices(std::vector<std::size_t> idx, std::string scope = {});
};

// Sets requires_grad on every parameter of the selected layers. Throws
// std::out_of_range when the selection addresses missing layers.
ModelGraph& set_trainable(ModelGraph& model, const LayerSelection& selection, bool trainable);

// ---------------------------------------------------------------------------
// Layer modules

class Conv2d
{
public:
    Conv2d() = default;
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride, std::size_t padding, Rng& rng, bool bias = true);

    Tensor forward(const Tensor& x) const;
    void register_params(ModelGraph& graph, const std::string& name) const;

    std::size_t out_channels() const { return weight_.dim(0); }
    std::size_t kernel() const { return weight_.dim(2); }
    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return padding_; }
    const Tensor& weight() const { return weight_; }

private:
    Tensor weight_;
    Tensor bias_;
    std::size_t stride_ = 1;
    std::size_t padding_ = 0;
};

class FullyConnected
{
public:
    FullyConnected() = default;
    FullyConnected(std::size_t in_features, std::size_t units, double l2_weight, Rng& rng);

    FullyConnectedResult forward(const Tensor& x) const;
    void register_params(ModelGraph& graph, const std::string& name) const;

    std::size_t units() const { return weight_.dim(1); }

private:
    Tensor weight_;
    Tensor bias_;
    double l2_weight_ = 0.0;
};

// relu(conv3x3(relu(conv1x1(x)))) with the 1x1 bottleneck optional.
class DenseLayer
{
public:
    DenseLayer(std::size_t in_channels, std::size_t growth_rate, bool bottleneck, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void register_params(ModelGraph& graph, const std::string& name) const;
    std::size_t param_layer_count() const { return bottleneck_ ? 2 : 1; }

private:
    std::optional<Conv2d> bottleneck_;
    Conv2d conv_;
};

class DenseBlock
{
public:
    DenseBlock(std::size_t in_channels, DenseBlockSpec spec, Rng& rng);

    // Every internal layer consumes the channel-concatenation of the block
    // input and all earlier layer outputs.
    Tensor forward(const Tensor& x) const;
    void register_params(ModelGraph& graph, const std::string& name) const;

    std::size_t in_channels() const { return in_channels_; }
    std::size_t out_channels() const { return spec_.output_channels(in_channels_); }
    const DenseBlockSpec& spec() const { return spec_; }
    std::size_t param_layer_count() const;

private:
    std::size_t in_channels_;
    DenseBlockSpec spec_;
    std::vector<DenseLayer> layers_;
};

// avg_pool2x2(relu(conv1x1(x))) with channel compression.
class Transition
{
public:
    Transition(std::size_t in_channels, std::size_t out_channels, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void register_params(ModelGraph& graph, const std::string& name) const;
    std::size_t out_channels() const { return conv_.out_channels(); }

private:
    Conv2d conv_;
};

// Configurable DenseNet-style feature extractor: stem conv (+ optional 3x3/2
// max pool), then dense blocks separated by compressing transitions.
struct ExtractorSpec
{
    std::size_t in_channels = 3;
    std::size_t stem_channels = 16;
    std::size_t stem_kernel = 7;
    std::size_t stem_stride = 2;
    bool stem_pool = false;
    std::vector<std::size_t> block_layers = {4, 4, 4};
    std::size_t growth_rate = 12;
    bool bottleneck = false;
    double compression = 0.5;

    // DenseNet-121 topology: 120 parameterized layers.
    static ExtractorSpec densenet121();

    // Spatial side of the output for a square input of side `input_size`.
    std::size_t output_size(std::size_t input_size) const;
};

class DenseNetExtractor
{
public:
    using Stage = std::variant<Conv2d, DenseBlock, Transition, LayerSpec>;

    DenseNetExtractor(ExtractorSpec spec, Rng& rng);

    Tensor forward(const Tensor& x) const { return forward_range(x, 0, stage_count()); }
    // Runs stages [begin, end).
    Tensor forward_range(const Tensor& x, std::size_t begin, std::size_t end) const;

    // Names of the parameterized layers are "<prefix>.stem", "<prefix>.block1.layer2.conv", ...
    void register_params(ModelGraph& graph, const std::string& prefix);

    // First stage holding a trainable parameter (stage_count() when none).
    std::size_t first_trainable_stage(const ModelGraph& graph) const;

    std::size_t stage_count() const { return stages_.size(); }
    std::size_t out_channels() const { return out_channels_; }
    // Spatial size of the output for a square input of side `input_size`.
    std::size_t output_size(std::size_t input_size) const { return spec_.output_size(input_size); }
    const ExtractorSpec& spec() const { return spec_; }

private:
    ExtractorSpec spec_;
    std::vector<Stage> stages_;
    std::vector<std::vector<std::string>> stage_layer_names_;
    std::size_t out_channels_ = 0;
};

}  // namespace hycaps
