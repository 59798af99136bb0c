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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <span>

#include "hycaps/experiments.hpp"
#include "hycaps/layers.hpp"
#include "hycaps/ops.hpp"
#include "test_support.hpp"

using namespace hycaps;
using hycaps::testing::check_gradients;
using hycaps::testing::random_tensor;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Direct nested-loop convolution with zero padding.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad)
{
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const auto k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    std::vector<double> out(n * k * oh * ow, 0.0);
    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t ik = 0; ik < k; ++ik) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    double acc = b.defined() ? b[ik] : 0.0;
                    for (std::size_t ic = 0; ic < c; ++ic) {
                        for (std::size_t dy = 0; dy < kh; ++dy) {
                            for (std::size_t dx = 0; dx < kw; ++dx) {
                                const auto sy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
                                const auto sx = static_cast<long>(xx * stride + dx) - static_cast<long>(pad);
                                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd)) {
                                    continue;
                                }
                                acc += x[((in * c + ic) * h + sy) * wd + sx] * w[((ik * c + ic) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[((in * k + ik) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    return Tensor({n, k, oh, ow}, out);
}

const Tensor& param(const ModelGraph& g, const std::string& layer, const std::string& name)
{
    const auto* l = g.find(layer);
    if (l == nullptr) {
        throw std::runtime_error("missing layer " + layer);
    }
    for (const auto& [pname, t] : l->params) {
        if (pname == name) {
            return t;
        }
    }
    throw std::runtime_error("missing param " + layer + "." + name);
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

TEST(Conv2d, OnesKernelSumsWindow)
{
    const auto y = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), 1, 0);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.item(), 9.0);
}

TEST(Conv2d, CornerKernelStrideTwo)
{
    std::vector<double> x(16);
    for (std::size_t i = 0; i < 16; ++i) {
        x[i] = static_cast<double>(i + 1);
    }
    // Kernel selects the top-left pixel of every 2x2 window.
    const auto y = conv2d(Tensor({1, 1, 4, 4}, x), Tensor({1, 1, 2, 2}, {1, 0, 0, 0}), 2, 0);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(vals(y), (std::vector<double>{1, 3, 9, 11}));
}

TEST(Conv2d, OutputSizeFormula)
{
    Rng rng(1);
    for (int t = 0; t < 30; ++t) {
        const std::size_t h = 3 + rng.below(8), k = 1 + rng.below(3), s = 1 + rng.below(3), p = rng.below(2);
        const auto y = conv2d(Tensor::zeros({1, 2, h, h + 1}), Tensor::zeros({3, 2, k, k}), s, p);
        EXPECT_EQ(y.dim(2), (h + 2 * p - k) / s + 1);
        EXPECT_EQ(y.dim(3), (h + 1 + 2 * p - k) / s + 1);
    }
}

TEST(Conv2d, KernelLargerThanPaddedInputRejected)
{
    EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), 1, 1), ShapeError);
    EXPECT_NO_THROW(conv2d(Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1, 1, 5, 5}), 1, 1));
}

TEST(Conv2d, MatchesNaiveConvolution)
{
    Rng rng(2);
    for (int t = 0; t < 25; ++t) {
        const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(4), h = 4 + rng.below(5), k = 1 + rng.below(4);
        const std::size_t kh = 1 + rng.below(3), s = 1 + rng.below(2), p = rng.below(2);
        const auto x = random_tensor({n, c, h, h}, rng);
        const auto w = random_tensor({k, c, kh, kh}, rng);
        const auto b = random_tensor({k}, rng);
        const auto got = conv2d(x, w, b, s, p);
        const auto want = naive_conv(x, w, b, s, p);
        ASSERT_EQ(got.shape(), want.shape());
        for (std::size_t i = 0; i < got.numel(); ++i) {
            EXPECT_NEAR(got[i], want[i], 1e-12);
        }
    }
}

TEST(Conv2d, GradientOnTwoChannelFiveByFive)
{
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        Tensor x = random_tensor({1, 2, 5, 5}, rng, true);
        Tensor w = random_tensor({3, 2, 3, 3}, rng, true);
        Tensor b = random_tensor({3}, rng, true);
        const std::size_t stride = 1 + t % 2, pad = t % 3 == 0 ? 1 : 0;
        Tensor g = random_tensor(conv2d(x, w, b, stride, pad).shape(), rng);
        const auto r = check_gradients([&] { return sum(mul(conv2d(x, w, b, stride, pad), g)); }, {x, w, b});
        EXPECT_LT(r.max_rel_error, 1e-3);
    }
}

// ---------------------------------------------------------------------------
// pooling

TEST(Pooling, AverageAndMaxValues)
{
    const Tensor x({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    EXPECT_EQ(vals(avg_pool2d(x, 2, 2)), (std::vector<double>{3.5, 5.5}));
    EXPECT_EQ(vals(max_pool2d(x, 2, 2)), (std::vector<double>{6, 8}));
    // Padding behaves as -inf for max pooling.
    const Tensor neg({1, 1, 2, 2}, {-4, -3, -2, -1});
    EXPECT_EQ(vals(max_pool2d(neg, 3, 2, 1)), (std::vector<double>{-1}));
}

TEST(Pooling, Gradients)
{
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        // Distinct values 0.01 apart keep max-pool ties out of the difference stencil.
        std::vector<double> grid(72);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            grid[i] = 0.01 * static_cast<double>(i);
        }
        rng.shuffle(std::span<double>(grid));
        Tensor x({1, 2, 6, 6}, grid, true);
        Tensor ga = random_tensor(avg_pool2d(x, 2, 2).shape(), rng);
        Tensor gm = random_tensor(max_pool2d(x, 3, 2, 1).shape(), rng);
        const auto r = check_gradients(
            [&] { return add(sum(mul(avg_pool2d(x, 2, 2), ga)), sum(mul(max_pool2d(x, 3, 2, 1), gm))); }, {x});
        EXPECT_LT(r.max_rel_error, 1e-3);
    }
}

// ---------------------------------------------------------------------------
// dense blocks

TEST(DenseBlock, EmptyBlockIsIdentity)
{
    Rng rng(5);
    DenseBlock block(3, {0, 4, false}, rng);
    const auto x = random_tensor({2, 3, 4, 4}, rng);
    EXPECT_EQ(vals(block.forward(x)), vals(x));
    EXPECT_EQ(block.out_channels(), 3u);
}

TEST(DenseBlock, ChannelArithmetic)
{
    Rng rng(6);
    DenseBlock block(8, {2, 4, false}, rng);
    EXPECT_EQ(block.forward(random_tensor({1, 8, 5, 5}, rng)).dim(1), 16u);
}

TEST(DenseBlock, ChannelInvariantOverRandomSpecs)
{
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
        const DenseBlockSpec spec{rng.below(4), 1 + rng.below(6), rng.bernoulli(0.5)};
        const std::size_t c = 1 + rng.below(6);
        DenseBlock block(c, spec, rng);
        const auto y = block.forward(random_tensor({1, c, 3, 3}, rng));
        EXPECT_EQ(y.dim(1), c + spec.num_layers * spec.growth_rate);
        EXPECT_EQ(y.dim(1), spec.output_channels(c));
    }
}

TEST(DenseBlock, SingleLayerEqualsConcatOfInputAndConv)
{
    Rng rng(8);
    DenseBlock block(3, {1, 5, false}, rng);
    ModelGraph g;
    block.register_params(g, "b");
    const auto x = random_tensor({2, 3, 4, 4}, rng);
    const auto& w = param(g, "b.layer1.conv3x3", "weight");
    const auto& b = param(g, "b.layer1.conv3x3", "bias");
    const std::vector<Tensor> parts = {x, relu(naive_conv(x, w, b, 1, 1))};
    const auto want = concat(parts, 1);
    const auto got = block.forward(x);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) {
        EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(DenseBlock, LaterLayersSeeAllEarlierOutputs)
{
    Rng rng(9);
    DenseBlock block(2, {3, 2, true}, rng);
    ModelGraph g;
    block.register_params(g, "b");
    // Input channels of layer i's first conv: 2 + 2 * (i - 1).
    for (std::size_t i = 1; i <= 3; ++i) {
        const auto& w = param(g, "b.layer" + std::to_string(i) + ".conv1x1", "weight");
        EXPECT_EQ(w.dim(1), 2 + 2 * (i - 1));
    }
}

TEST(DenseBlock, Gradients)
{
    Rng rng(10);
    for (int t = 0; t < 20; ++t) {
        DenseBlock block(2, {2, 3, t % 2 == 0}, rng);
        ModelGraph g;
        block.register_params(g, "b");
        Tensor x = random_tensor({1, 2, 4, 4}, rng, true);
        Tensor probe = random_tensor({1, 8, 4, 4}, rng);
        auto leaves = g.parameters();
        leaves.push_back(x);
        for (auto& p : leaves) {
            p.set_requires_grad(true);
        }
        // Small step so the stencil rarely straddles a ReLU kink.
        const auto r = check_gradients([&] { return sum(mul(block.forward(x), probe)); }, leaves, 1e-6);
        EXPECT_LT(r.max_rel_error, 1e-3) << "instance " << t;
    }
}

TEST(Transition, HalvesSpatialAndCompresses)
{
    Rng rng(11);
    Transition tr(8, 4, rng);
    const auto y = tr.forward(random_tensor({2, 8, 6, 6}, rng));
    EXPECT_EQ(y.shape(), (Shape{2, 4, 3, 3}));
    ModelGraph g;
    tr.register_params(g, "t");
    Tensor x = random_tensor({1, 8, 4, 4}, rng, true);
    Tensor probe = random_tensor({1, 4, 2, 2}, rng);
    auto leaves = g.parameters();
    leaves.push_back(x);
    const auto r = check_gradients([&] { return sum(mul(tr.forward(x), probe)); }, leaves);
    EXPECT_LT(r.max_rel_error, 1e-3);
}

// ---------------------------------------------------------------------------
// fully connected, dropout

TEST(FullyConnected, IdentityWeights)
{
    const auto r = fully_connected(Tensor({1, 2}, {1, 2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {1, 1}), 0.0);
    EXPECT_EQ(vals(r.output), (std::vector<double>{2, 3}));
    EXPECT_DOUBLE_EQ(r.penalty.item(), 0.0);
}

TEST(FullyConnected, PenaltyExcludesBias)
{
    const auto r = fully_connected(Tensor({1, 2}, {1, 2}), Tensor::full({2, 2}, 1.0), Tensor({2}, {5, 5}), 0.5);
    EXPECT_DOUBLE_EQ(r.penalty.item(), 2.0);
}

TEST(FullyConnected, DimensionMismatch)
{
    EXPECT_THROW(fully_connected(Tensor::zeros({1, 3}), Tensor::zeros({2, 2}), Tensor::zeros({2}), 0.0),
                 ShapeError);
}

TEST(FullyConnected, Gradients)
{
    Rng rng(12);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 1 + rng.below(4), d = 1 + rng.below(4), u = 1 + rng.below(4);
        Tensor x = random_tensor({n, d}, rng, true);
        Tensor w = random_tensor({d, u}, rng, true);
        Tensor b = random_tensor({u}, rng, true);
        Tensor probe = random_tensor({n, u}, rng);
        const auto r = check_gradients(
            [&] {
                const auto fc = fully_connected(x, w, b, 0.3);
                return add(sum(mul(fc.output, probe)), fc.penalty);
            },
            {x, w, b});
        EXPECT_LT(r.max_rel_error, 1e-3);
    }
}

TEST(Dropout, EvalModeAndKeepOneAreIdentity)
{
    Rng rng(13);
    const auto x = random_tensor({3, 7}, rng);
    EXPECT_EQ(vals(dropout(x, 0.3, Mode::eval, 1)), vals(x));
    EXPECT_EQ(vals(dropout(x, 1.0, Mode::train, 1)), vals(x));
}

TEST(Dropout, InvertedScalingPreservesMean)
{
    const auto y = dropout(Tensor::full({100000}, 1.0), 0.5, Mode::train, 42);
    double total = 0.0;
    std::size_t zeros = 0;
    for (double v : y.values()) {
        total += v;
        zeros += v == 0.0;
        EXPECT_TRUE(v == 0.0 || v == 2.0);
    }
    EXPECT_NEAR(total / 1e5, 1.0, 0.03);
    EXPECT_GT(zeros, 0u);
}

TEST(Dropout, SeededAndValidated)
{
    const auto x = Tensor::full({50}, 1.0);
    EXPECT_EQ(vals(dropout(x, 0.6, Mode::train, 9)), vals(dropout(x, 0.6, Mode::train, 9)));
    EXPECT_NE(vals(dropout(x, 0.6, Mode::train, 9)), vals(dropout(x, 0.6, Mode::train, 10)));
    EXPECT_THROW(dropout(x, 0.0, Mode::train, 1), std::invalid_argument);
    EXPECT_THROW(dropout(x, 1.5, Mode::train, 1), std::invalid_argument);
}

TEST(LayerSpec, ValidateRanges)
{
    LayerSpec s;
    EXPECT_NO_THROW(s.validate());
    s.kernel_size = 0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = LayerSpec{};
    s.kind = LayerKind::dropout;
    s.keep_prob = 0.0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = LayerSpec{};
    s.kind = LayerKind::fully_connected;
    s.units = 3;
    s.l2_weight = -1;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(HeUniform, WithinBound)
{
    Rng rng(14);
    const auto w = he_uniform({64, 25}, 25, rng);
    const double bound = std::sqrt(6.0 / 25.0);
    double max_abs = 0.0;
    for (double v : w.values()) {
        max_abs = std::max(max_abs, std::abs(v));
    }
    EXPECT_LE(max_abs, bound);
    EXPECT_GT(max_abs, 0.9 * bound);
}

// ---------------------------------------------------------------------------
// trainability

namespace {

// DenseNet-121 extractor plus one FC head: 121 parameterized layers.
struct Net121
{
    Rng rng{15};
    ModelGraph graph;
    DenseNetExtractor extractor{ExtractorSpec::densenet121(), rng};
    FullyConnected head{4, 2, 0.0, rng};

    Net121()
    {
        extractor.register_params(graph, "extractor");
        head.register_params(graph, "head");
    }
};

}  // namespace

TEST(Trainability, DenseNet121HasOneHundredTwentyOneLayers)
{
    Net121 net;
    EXPECT_EQ(net.graph.layer_count(), 121u);
    EXPECT_EQ(net.graph.layers_in("extractor").size(), 120u);
}

TEST(Trainability, UnfreezeLastThirty)
{
    Net121 net;
    set_trainable(net.graph, LayerSelection::all(), false);
    set_trainable(net.graph, LayerSelection::last(30), true);
    const auto layers = net.graph.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const bool expect = i >= layers.size() - 30;
        for (const auto& [name, t] : layers[i].params) {
            EXPECT_EQ(t.requires_grad(), expect) << layers[i].name << "." << name;
        }
    }
}

TEST(Trainability, LastAllEqualsFullyTrainable)
{
    Net121 net;
    set_trainable(net.graph, LayerSelection::all(), false);
    set_trainable(net.graph, LayerSelection::last(net.graph.layer_count()), true);
    EXPECT_EQ(net.graph.trainable_parameters().size(), net.graph.parameters().size());
    EXPECT_THROW(set_trainable(net.graph, LayerSelection::last(net.graph.layer_count() + 1), true),
                 std::out_of_range);
    EXPECT_THROW(set_trainable(net.graph, LayerSelection::explicit_indices({500}), true), std::out_of_range);
}

TEST(Trainability, FrozenParametersUnchangedByOptimizerSteps)
{
    Rng rng(16);
    ModelGraph g;
    FullyConnected a(3, 4, 0.0, rng), b(4, 2, 0.0, rng);
    a.register_params(g, "a");
    b.register_params(g, "b");
    set_trainable(g, LayerSelection::first(1), false);
    const auto before = vals(g.parameters()[0]);
    const auto before_b = vals(g.parameters()[2]);
    for (auto kind : {OptimizerKind::adam, OptimizerKind::rmsprop}) {
        Optimizer opt(g.parameters(), kind, 0.01);
        for (int step = 0; step < 5; ++step) {
            g.zero_grad();
            const auto x = random_tensor({5, 3}, rng);
            backward(sum(square(b.forward(relu(a.forward(x).output)).output)));
            opt.step();
        }
    }
    EXPECT_EQ(vals(g.parameters()[0]), before);
    EXPECT_NE(vals(g.parameters()[2]), before_b);
}

TEST(Trainability, FreezeAllThenStepLeavesEverythingBitwise)
{
    Rng rng(17);
    ModelGraph g;
    FullyConnected a(3, 4, 0.0, rng);
    a.register_params(g, "a");
    set_trainable(g, LayerSelection::all(), false);
    std::vector<std::vector<double>> before;
    for (const auto& p : g.parameters()) {
        before.push_back(vals(p));
    }
    Optimizer opt(g.parameters(), OptimizerKind::adam, 0.01);
    opt.step();
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_EQ(vals(g.parameters()[i]), before[i]);
    }
}

TEST(Extractor, OutputSizeMatchesForward)
{
    Rng rng(18);
    for (const char* name : {"tiny", "small"}) {
        const auto spec = extractor_preset(name);
        DenseNetExtractor ex(spec, rng);
        for (std::size_t size : {32u, 40u, 64u}) {
            const auto y = ex.forward(random_tensor({1, 3, size, size}, rng));
            EXPECT_EQ(y.dim(2), spec.output_size(size)) << name << " " << size;
            EXPECT_EQ(y.dim(1), ex.out_channels());
        }
    }
}

TEST(Extractor, ForwardRangeComposes)
{
    Rng rng(19);
    DenseNetExtractor ex(extractor_preset("tiny"), rng);
    const auto x = random_tensor({2, 3, 32, 32}, rng);
    const auto whole = ex.forward(x);
    for (std::size_t cut = 0; cut <= ex.stage_count(); ++cut) {
        const auto split = ex.forward_range(ex.forward_range(x, 0, cut), cut, ex.stage_count());
        EXPECT_EQ(vals(split), vals(whole)) << "cut " << cut;
    }
}
