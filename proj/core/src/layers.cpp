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

#include "hycaps/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hycaps/ops.hpp"

namespace hycaps {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

struct ConvGeometry
{
    std::size_t n, c, h, w;
    std::size_t k, kh, kw;
    std::size_t stride, pad;
    std::size_t oh, ow;

    std::size_t patch() const { return c * kh * kw; }
    std::size_t positions() const { return oh * ow; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* img, const ConvGeometry& g, double* col)
{
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.positions();
                for (std::size_t y = 0; y < g.oh; ++y) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    double* dst = row + y * g.ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill_n(dst, g.ow, 0.0);
                        continue;
                    }
                    const double* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t x = 0; x < g.ow; ++x) {
                        const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        dst[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                                     ? 0.0
                                     : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const ConvGeometry& g, double* img)
{
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.positions();
                for (std::size_t y = 0; y < g.oh; ++y) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        continue;
                    }
                    double* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const double* src = row + y * g.ow;
                    for (std::size_t x = 0; x < g.ow; ++x) {
                        const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
                            dst[ix] += src[x];
                        }
                    }
                }
            }
        }
    }
}

std::string pool_name(bool is_max) { return is_max ? "max_pool2d" : "avg_pool2d"; }

void require_nchw(std::string_view op, const Tensor& x)
{
    if (x.rank() != 4) {
        throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " + shape_str(x.shape()));
    }
}

}  // namespace

std::string_view to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense_block: return "dense_block";
    case LayerKind::transition: return "transition";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::dropout: return "dropout";
    }
    return "unknown";
}

void LayerSpec::validate() const
{
    if (kernel_size < 1) {
        throw std::invalid_argument("kernel size must be >= 1");
    }
    if (stride < 1) {
        throw std::invalid_argument("stride must be >= 1");
    }
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
        throw std::invalid_argument("keep probability must lie in (0, 1]");
    }
    if (!(l2_weight >= 0.0)) {
        throw std::invalid_argument("L2 weight must be >= 0");
    }
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
              std::size_t padding)
{
    require_nchw("conv2d", input);
    if (weights.rank() != 4 || weights.dim(1) != input.dim(1)) {
        throw ShapeError("conv2d: weights " + shape_str(weights.shape()) +
                         " do not match input " + shape_str(input.shape()));
    }
    if (stride < 1) {
        throw std::invalid_argument("conv2d: stride must be >= 1");
    }
    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                   weights.dim(0), weights.dim(2), weights.dim(3), stride, padding, 0, 0};
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
        throw ShapeError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " larger than padded input " + shape_str(input.shape()));
    }
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
    const bool has_bias = bias.defined();
    if (has_bias && (bias.numel() != g.k)) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(g.k) + " filters");
    }

    const auto K = static_cast<Eigen::Index>(g.k);
    const auto P = static_cast<Eigen::Index>(g.patch());
    const auto Q = static_cast<Eigen::Index>(g.positions());
    const std::size_t in_stride = g.c * g.h * g.w;
    const std::size_t out_stride = g.k * g.positions();

    std::vector<double> out(g.n * out_stride);
    std::vector<double> col(g.pointwise() ? 0 : g.patch() * g.positions());
    ConstMap wmat(weights.values().data(), K, P);
    for (std::size_t n = 0; n < g.n; ++n) {
        const double* img = input.values().data() + n * in_stride;
        const double* cols = img;
        if (!g.pointwise()) {
            im2col(img, g, col.data());
            cols = col.data();
        }
        Map o(out.data() + n * out_stride, K, Q);
        o.noalias() = wmat * ConstMap(cols, P, Q);
        if (has_bias) {
            for (Eigen::Index k = 0; k < K; ++k) {
                o.row(k).array() += bias.values()[static_cast<std::size_t>(k)];
            }
        }
    }

    std::vector<Tensor> inputs{input, weights};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return make_result(
        "conv2d", {g.n, g.k, g.oh, g.ow}, std::move(out), std::move(inputs),
        [g, K, P, Q, in_stride, out_stride](const TensorImpl& res, std::vector<Tensor>& in) {
            const bool want_x = in[0].requires_grad();
            const bool want_w = in[1].requires_grad();
            const bool want_b = in.size() > 2 && in[2].requires_grad();
            std::vector<double> gx(want_x ? g.n * in_stride : 0, 0.0);
            std::vector<double> gw(want_w ? static_cast<std::size_t>(K * P) : 0, 0.0);
            std::vector<double> gb(want_b ? g.k : 0, 0.0);
            std::vector<double> col(g.pointwise() ? 0 : g.patch() * g.positions());
            std::vector<double> dcol(want_x && !g.pointwise() ? col.size() : 0);
            // a materialised transpose keeps the input-gradient GEMM on the fast path
            const RowMatrix wt = ConstMap(in[1].values().data(), K, P).transpose();
            for (std::size_t n = 0; n < g.n; ++n) {
                ConstMap go(res.grad.data() + n * out_stride, K, Q);
                if (want_w) {
                    const double* img = in[0].values().data() + n * in_stride;
                    const double* cols = img;
                    if (!g.pointwise()) {
                        im2col(img, g, col.data());
                        cols = col.data();
                    }
                    Map(gw.data(), K, P).noalias() += go * ConstMap(cols, P, Q).transpose();
                }
                if (want_x) {
                    if (g.pointwise()) {
                        Map(gx.data() + n * in_stride, P, Q).noalias() = wt * go;
                    } else {
                        Map(dcol.data(), P, Q).noalias() = wt * go;
                        col2im(dcol.data(), g, gx.data() + n * in_stride);
                    }
                }
                if (want_b) {
                    // plain loop: Eigen's vectorised sum peels by address, so
                    // its rounding would depend on where the buffer landed
                    const double* row = res.grad.data() + n * out_stride;
                    for (std::size_t k = 0; k < g.k; ++k, row += g.positions()) {
                        double acc = 0.0;
                        for (std::size_t q = 0; q < g.positions(); ++q) {
                            acc += row[q];
                        }
                        gb[k] += acc;
                    }
                }
            }
            if (want_x) {
                accumulate_grad(in[0], gx);
            }
            if (want_w) {
                accumulate_grad(in[1], gw);
            }
            if (want_b) {
                accumulate_grad(in[2], gb);
            }
        });
}

namespace {

Tensor pool2d(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding,
              bool is_max)
{
    const auto name = pool_name(is_max);
    require_nchw(name, input);
    if (kernel < 1 || stride < 1) {
        throw std::invalid_argument(name + ": kernel and stride must be >= 1");
    }
    const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (kernel > h + 2 * padding || kernel > w + 2 * padding) {
        throw ShapeError(name + ": kernel larger than input " + shape_str(input.shape()));
    }
    const auto oh = (h + 2 * padding - kernel) / stride + 1;
    const auto ow = (w + 2 * padding - kernel) / stride + 1;
    const auto xv = input.values();
    std::vector<double> out(n * c * oh * ow);
    // argmax source per output, or unused for average pooling
    std::vector<std::size_t> src(is_max ? out.size() : 0);
    const double inv_area = 1.0 / static_cast<double>(kernel * kernel);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double* p = xv.data() + plane * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
                std::size_t best = 0;
                for (std::size_t i = 0; i < kernel; ++i) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * stride + i) -
                                    static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                        continue;
                    }
                    for (std::size_t j = 0; j < kernel; ++j) {
                        const auto ix = static_cast<std::ptrdiff_t>(x * stride + j) -
                                        static_cast<std::ptrdiff_t>(padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) {
                            continue;
                        }
                        const auto off = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                        if (is_max) {
                            if (p[off] > acc) {
                                acc = p[off];
                                best = off;
                            }
                        } else {
                            acc += p[off];
                        }
                    }
                }
                const auto o = (plane * oh + y) * ow + x;
                if (is_max) {
                    out[o] = acc;
                    src[o] = plane * h * w + best;
                } else {
                    out[o] = acc * inv_area;
                }
            }
        }
    }
    return make_result(
        name, {n, c, oh, ow}, std::move(out), {input},
        [=, src = std::move(src)](const TensorImpl& res, std::vector<Tensor>& in) {
            std::vector<double> g(in[0].numel(), 0.0);
            if (is_max) {
                for (std::size_t o = 0; o < res.grad.size(); ++o) {
                    g[src[o]] += res.grad[o];
                }
            } else {
                for (std::size_t plane = 0; plane < n * c; ++plane) {
                    for (std::size_t y = 0; y < oh; ++y) {
                        for (std::size_t x = 0; x < ow; ++x) {
                            const double go = res.grad[(plane * oh + y) * ow + x] * inv_area;
                            for (std::size_t i = 0; i < kernel; ++i) {
                                const auto iy = static_cast<std::ptrdiff_t>(y * stride + i) -
                                                static_cast<std::ptrdiff_t>(padding);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                                    continue;
                                }
                                for (std::size_t j = 0; j < kernel; ++j) {
                                    const auto ix = static_cast<std::ptrdiff_t>(x * stride + j) -
                                                    static_cast<std::ptrdiff_t>(padding);
                                    if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) {
                                        g[plane * h * w + static_cast<std::size_t>(iy) * w +
                                          static_cast<std::size_t>(ix)] += go;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            accumulate_grad(in[0], g);
        });
}

}  // namespace

Tensor avg_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride)
{
    return pool2d(input, kernel, stride, 0, false);
}

Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding)
{
    return pool2d(input, kernel, stride, padding, true);
}

FullyConnectedResult fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias,
                                     double l2_weight)
{
    if (input.rank() != 2 || weights.rank() != 2 || input.dim(1) != weights.dim(0) ||
        bias.numel() != weights.dim(1)) {
        throw ShapeError("fully_connected: input " + shape_str(input.shape()) + ", weights " +
                         shape_str(weights.shape()) + ", bias " + shape_str(bias.shape()) +
                         " do not agree");
    }
    if (!(l2_weight >= 0.0)) {
        throw std::invalid_argument("fully_connected: L2 weight must be >= 0");
    }
    auto out = add(matmul(input, weights), reshape(bias, {weights.dim(1)}));
    auto penalty = scale(sum(square(weights)), l2_weight);
    return {out, penalty};
}

Tensor dropout(const Tensor& input, double keep_prob, Mode mode, std::uint64_t seed)
{
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
        throw std::invalid_argument("dropout: keep probability must lie in (0, 1], got " +
                                    std::to_string(keep_prob));
    }
    if (mode == Mode::eval || keep_prob == 1.0) {
        return input;
    }
    Rng rng(seed);
    std::vector<double> mask(input.numel());
    const double survivor = 1.0 / keep_prob;
    for (auto& m : mask) {
        m = rng.uniform() < keep_prob ? survivor : 0.0;
    }
    return mul(input, Tensor(input.shape(), std::move(mask)));
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng)
{
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(num_elements(shape));
    for (auto& x : v) {
        x = rng.uniform(-bound, bound);
    }
    return Tensor(std::move(shape), std::move(v), true);
}

// ---------------------------------------------------------------------------

void ModelGraph::add_layer(std::string name, std::vector<std::pair<std::string, Tensor>> params)
{
    if (find(name) != nullptr) {
        throw std::invalid_argument("duplicate layer name: " + name);
    }
    bool trainable = std::any_of(params.begin(), params.end(),
                                 [](const auto& p) { return p.second.requires_grad(); });
    layers_.push_back(ParamLayer{std::move(name), std::move(params), trainable});
}

std::vector<std::size_t> ModelGraph::layers_in(std::string_view prefix) const
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].name.starts_with(prefix)) {
            idx.push_back(i);
        }
    }
    return idx;
}

const ParamLayer* ModelGraph::find(std::string_view name) const
{
    for (const auto& l : layers_) {
        if (l.name == name) {
            return &l;
        }
    }
    return nullptr;
}

std::vector<Tensor> ModelGraph::parameters() const
{
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
        for (const auto& [_, t] : l.params) {
            out.push_back(t);
        }
    }
    return out;
}

std::vector<Tensor> ModelGraph::trainable_parameters() const
{
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
        for (const auto& [_, t] : l.params) {
            if (t.requires_grad()) {
                out.push_back(t);
            }
        }
    }
    return out;
}

std::vector<Tensor> ModelGraph::regularized_weights() const
{
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
        for (const auto& [name, t] : l.params) {
            if (name != "bias" && t.requires_grad()) {
                out.push_back(t);
            }
        }
    }
    return out;
}

std::size_t ModelGraph::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& l : layers_) {
        for (const auto& [_, t] : l.params) {
            n += t.numel();
        }
    }
    return n;
}

void ModelGraph::zero_grad()
{
    for (auto& l : layers_) {
        for (auto& [_, t] : l.params) {
            t.zero_grad();
        }
    }
}

LayerSelection LayerSelection::all(std::string scope)
{
    return {Kind::all, 0, {}, std::move(scope)};
}

LayerSelection LayerSelection::last(std::size_t k, std::string scope)
{
    return {Kind::last, k, {}, std::move(scope)};
}

LayerSelection LayerSelection::first(std::size_t k, std::string scope)
{
    return {Kind::first, k, {}, std::move(scope)};
}

LayerSelection LayerSelection::explicit_indices(std::vector<std::size_t> idx, std::string scope)
{
    return {Kind::indices, 0, std::move(idx), std::move(scope)};
}

ModelGraph& set_trainable(ModelGraph& model, const LayerSelection& selection, bool trainable)
{
    const auto candidates = model.layers_in(selection.scope);
    std::vector<std::size_t> chosen;
    switch (selection.kind) {
    case LayerSelection::Kind::all:
        chosen = candidates;
        break;
    case LayerSelection::Kind::last:
    case LayerSelection::Kind::first:
        if (selection.count > candidates.size()) {
            throw std::out_of_range("selection of " + std::to_string(selection.count) +
                                    " layers exceeds the " + std::to_string(candidates.size()) +
                                    " layers in scope '" + selection.scope + "'");
        }
        if (selection.kind == LayerSelection::Kind::last) {
            chosen.assign(candidates.end() - static_cast<std::ptrdiff_t>(selection.count),
                          candidates.end());
        } else {
            chosen.assign(candidates.begin(),
                          candidates.begin() + static_cast<std::ptrdiff_t>(selection.count));
        }
        break;
    case LayerSelection::Kind::indices:
        for (auto i : selection.indices) {
            if (i >= candidates.size()) {
                throw std::out_of_range("layer index " + std::to_string(i) + " out of range (" +
                                        std::to_string(candidates.size()) + " layers in scope '" +
                                        selection.scope + "')");
            }
            chosen.push_back(candidates[i]);
        }
        break;
    }
    auto layers = model.layers();
    for (auto i : chosen) {
        layers[i].trainable = trainable;
        for (auto& [_, t] : layers[i].params) {
            t.set_requires_grad(trainable);
        }
    }
    return model;
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding, Rng& rng, bool bias)
    : weight_(he_uniform({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
      stride_(stride),
      padding_(padding)
{
    if (bias) {
        bias_ = Tensor::zeros({out_channels}, true);
    }
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

void Conv2d::register_params(ModelGraph& graph, const std::string& name) const
{
    std::vector<std::pair<std::string, Tensor>> params{{"weight", weight_}};
    if (bias_.defined()) {
        params.emplace_back("bias", bias_);
    }
    graph.add_layer(name, std::move(params));
}

FullyConnected::FullyConnected(std::size_t in_features, std::size_t units, double l2_weight, Rng& rng)
    : weight_(he_uniform({in_features, units}, in_features, rng)),
      bias_(Tensor::zeros({units}, true)),
      l2_weight_(l2_weight)
{
}

FullyConnectedResult FullyConnected::forward(const Tensor& x) const
{
    return fully_connected(x, weight_, bias_, weight_.requires_grad() ? l2_weight_ : 0.0);
}

void FullyConnected::register_params(ModelGraph& graph, const std::string& name) const
{
    graph.add_layer(name, {{"weight", weight_}, {"bias", bias_}});
}

DenseLayer::DenseLayer(std::size_t in_channels, std::size_t growth_rate, bool bottleneck, Rng& rng)
{
    std::size_t conv_in = in_channels;
    if (bottleneck) {
        bottleneck_.emplace(in_channels, 4 * growth_rate, 1, 1, 0, rng);
        conv_in = 4 * growth_rate;
    }
    conv_ = Conv2d(conv_in, growth_rate, 3, 1, 1, rng);
}

Tensor DenseLayer::forward(const Tensor& x) const
{
    Tensor h = x;
    if (bottleneck_) {
        h = relu(bottleneck_->forward(h));
    }
    return relu(conv_.forward(h));
}

void DenseLayer::register_params(ModelGraph& graph, const std::string& name) const
{
    if (bottleneck_) {
        bottleneck_->register_params(graph, name + ".conv1x1");
        conv_.register_params(graph, name + ".conv3x3");
    } else {
        conv_.register_params(graph, name + ".conv3x3");
    }
}

DenseBlock::DenseBlock(std::size_t in_channels, DenseBlockSpec spec, Rng& rng)
    : in_channels_(in_channels), spec_(spec)
{
    if (spec.growth_rate == 0 && spec.num_layers > 0) {
        throw std::invalid_argument("dense block growth rate must be positive");
    }
    for (std::size_t i = 0; i < spec.num_layers; ++i) {
        layers_.emplace_back(in_channels + i * spec.growth_rate, spec.growth_rate, spec.bottleneck, rng);
    }
}

Tensor DenseBlock::forward(const Tensor& x) const
{
    require_nchw("dense_block", x);
    if (x.dim(1) != in_channels_) {
        throw ShapeError("dense_block: expected " + std::to_string(in_channels_) +
                         " input channels, got " + shape_str(x.shape()));
    }
    std::vector<Tensor> features{x};
    Tensor joined = x;
    for (const auto& layer : layers_) {
        features.push_back(layer.forward(joined));
        joined = concat(features, 1);
    }
    return joined;
}

void DenseBlock::register_params(ModelGraph& graph, const std::string& name) const
{
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].register_params(graph, name + ".layer" + std::to_string(i + 1));
    }
}

std::size_t DenseBlock::param_layer_count() const
{
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += l.param_layer_count();
    }
    return n;
}

Transition::Transition(std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : conv_(in_channels, out_channels, 1, 1, 0, rng)
{
}

Tensor Transition::forward(const Tensor& x) const
{
    return avg_pool2d(relu(conv_.forward(x)), 2, 2);
}

void Transition::register_params(ModelGraph& graph, const std::string& name) const
{
    conv_.register_params(graph, name + ".conv");
}

ExtractorSpec ExtractorSpec::densenet121()
{
    ExtractorSpec s;
    s.stem_channels = 64;
    s.stem_kernel = 7;
    s.stem_stride = 2;
    s.stem_pool = true;
    s.block_layers = {6, 12, 24, 16};
    s.growth_rate = 32;
    s.bottleneck = true;
    s.compression = 0.5;
    return s;
}

DenseNetExtractor::DenseNetExtractor(ExtractorSpec spec, Rng& rng) : spec_(std::move(spec))
{
    if (spec_.block_layers.empty()) {
        throw std::invalid_argument("extractor needs at least one dense block");
    }
    if (!(spec_.compression > 0.0 && spec_.compression <= 1.0)) {
        throw std::invalid_argument("transition compression must lie in (0, 1]");
    }
    stages_.emplace_back(Conv2d(spec_.in_channels, spec_.stem_channels, spec_.stem_kernel,
                                spec_.stem_stride, spec_.stem_kernel / 2, rng));
    if (spec_.stem_pool) {
        LayerSpec pool;
        pool.kind = LayerKind::max_pool;
        pool.kernel_size = 3;
        pool.stride = 2;
        pool.padding = 1;
        stages_.emplace_back(pool);
    }
    std::size_t channels = spec_.stem_channels;
    for (std::size_t b = 0; b < spec_.block_layers.size(); ++b) {
        DenseBlock block(channels, {spec_.block_layers[b], spec_.growth_rate, spec_.bottleneck}, rng);
        channels = block.out_channels();
        stages_.emplace_back(std::move(block));
        if (b + 1 < spec_.block_layers.size()) {
            auto out = static_cast<std::size_t>(std::floor(static_cast<double>(channels) * spec_.compression));
            out = std::max<std::size_t>(out, 1);
            stages_.emplace_back(Transition(channels, out, rng));
            channels = out;
        }
    }
    out_channels_ = channels;
}

Tensor DenseNetExtractor::forward_range(const Tensor& x, std::size_t begin, std::size_t end) const
{
    Tensor h = x;
    for (std::size_t i = begin; i < end && i < stages_.size(); ++i) {
        const auto& stage = stages_[i];
        if (const auto* conv = std::get_if<Conv2d>(&stage)) {
            h = relu(conv->forward(h));
        } else if (const auto* block = std::get_if<DenseBlock>(&stage)) {
            h = block->forward(h);
        } else if (const auto* trans = std::get_if<Transition>(&stage)) {
            h = trans->forward(h);
        } else {
            const auto& pool = std::get<LayerSpec>(stage);
            h = max_pool2d(h, pool.kernel_size, pool.stride, pool.padding);
        }
    }
    return h;
}

void DenseNetExtractor::register_params(ModelGraph& graph, const std::string& prefix)
{
    stage_layer_names_.assign(stages_.size(), {});
    std::size_t block_no = 0;
    std::size_t trans_no = 0;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        const auto before = graph.layer_count();
        const auto& stage = stages_[i];
        if (const auto* conv = std::get_if<Conv2d>(&stage)) {
            conv->register_params(graph, prefix + ".stem");
        } else if (const auto* block = std::get_if<DenseBlock>(&stage)) {
            block->register_params(graph, prefix + ".block" + std::to_string(++block_no));
        } else if (const auto* trans = std::get_if<Transition>(&stage)) {
            trans->register_params(graph, prefix + ".transition" + std::to_string(++trans_no));
        }
        for (auto j = before; j < graph.layer_count(); ++j) {
            stage_layer_names_[i].push_back(graph.layers()[j].name);
        }
    }
}

std::size_t DenseNetExtractor::first_trainable_stage(const ModelGraph& graph) const
{
    for (std::size_t i = 0; i < stage_layer_names_.size(); ++i) {
        for (const auto& name : stage_layer_names_[i]) {
            const auto* layer = graph.find(name);
            if (layer != nullptr) {
                for (const auto& [_, t] : layer->params) {
                    if (t.requires_grad()) {
                        return i;
                    }
                }
            }
        }
    }
    return stages_.size();
}

std::size_t ExtractorSpec::output_size(std::size_t input_size) const
{
    auto size = (input_size + 2 * (stem_kernel / 2) - stem_kernel) / stem_stride + 1;
    if (stem_pool) {
        size = (size + 2 - 3) / 2 + 1;
    }
    for (std::size_t b = 0; b + 1 < block_layers.size(); ++b) {
        size /= 2;
    }
    return size;
}

}  // namespace hycaps
