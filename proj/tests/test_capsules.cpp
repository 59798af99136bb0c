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

#include <algorithm>
#include <cmath>

#include "hycaps/capsules.hpp"
#include "hycaps/ops.hpp"
#include "test_support.hpp"

using namespace hycaps;
using hycaps::testing::check_gradients;
using hycaps::testing::random_tensor;

namespace {

double norm_of(const Tensor& t, std::size_t offset, std::size_t dim)
{
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        s += t[offset + k] * t[offset + k];
    }
    return std::sqrt(s);
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t k)
{
    std::vector<double> v(labels.size() * k, 0.0);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        v[n * k + labels[n]] = 1.0;
    }
    return Tensor({labels.size(), k}, v);
}

// Capsules [N, J, D] whose vector j has norm norms[n*J + j] along the first axis.
Tensor capsules_with_norms(const std::vector<double>& norms, std::size_t n, std::size_t j, std::size_t d)
{
    std::vector<double> v(n * j * d, 0.0);
    for (std::size_t i = 0; i < n * j; ++i) {
        v[i * d] = norms[i];
    }
    return Tensor({n, j, d}, v);
}

using Vec = std::vector<double>;

Vec scalar_squash(const Vec& s)
{
    double n2 = 0.0;
    for (double x : s) {
        n2 += x * x;
    }
    if (n2 == 0.0) {
        return Vec(s.size(), 0.0);
    }
    const double f = n2 / (1.0 + n2) / std::sqrt(n2);
    Vec out(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
        out[k] = f * s[k];
    }
    return out;
}

// Plain-loop routing for one sample: u [I][din], W [I][J][dout][din].
std::vector<Vec> scalar_route(const std::vector<Vec>& u, const std::vector<std::vector<std::vector<Vec>>>& W,
                              std::size_t iters)
{
    const auto I = u.size(), J = W[0].size(), dout = W[0][0].size();
    std::vector<std::vector<Vec>> uhat(I, std::vector<Vec>(J, Vec(dout, 0.0)));
    for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t j = 0; j < J; ++j) {
            for (std::size_t o = 0; o < dout; ++o) {
                for (std::size_t k = 0; k < u[i].size(); ++k) {
                    uhat[i][j][o] += W[i][j][o][k] * u[i][k];
                }
            }
        }
    }
    std::vector<Vec> b(I, Vec(J, 0.0));
    std::vector<Vec> v(J);
    for (std::size_t r = 0; r < iters; ++r) {
        std::vector<Vec> c(I, Vec(J));
        for (std::size_t i = 0; i < I; ++i) {
            double z = 0.0;
            for (std::size_t j = 0; j < J; ++j) {
                z += std::exp(b[i][j]);
            }
            for (std::size_t j = 0; j < J; ++j) {
                c[i][j] = std::exp(b[i][j]) / z;
            }
        }
        for (std::size_t j = 0; j < J; ++j) {
            Vec s(dout, 0.0);
            for (std::size_t i = 0; i < I; ++i) {
                for (std::size_t o = 0; o < dout; ++o) {
                    s[o] += c[i][j] * uhat[i][j][o];
                }
            }
            v[j] = scalar_squash(s);
        }
        if (r + 1 < iters) {
            for (std::size_t i = 0; i < I; ++i) {
                for (std::size_t j = 0; j < J; ++j) {
                    for (std::size_t o = 0; o < dout; ++o) {
                        b[i][j] += uhat[i][j][o] * v[j][o];
                    }
                }
            }
        }
    }
    return v;
}

double scalar_margin(const std::vector<double>& norms, const std::vector<std::size_t>& labels, std::size_t k)
{
    double total = 0.0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        for (std::size_t j = 0; j < k; ++j) {
            const double len = norms[n * k + j];
            if (j == labels[n]) {
                total += std::pow(std::max(0.0, 0.9 - len), 2);
            } else {
                total += 0.5 * std::pow(std::max(0.0, len - 0.1), 2);
            }
        }
    }
    return total / static_cast<double>(labels.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// squash

TEST(Squash, Examples)
{
    const auto zero = squash(Tensor::zeros({1, 4}));
    for (double v : zero.values()) {
        EXPECT_EQ(v, 0.0);
    }
    const auto unit = squash(Tensor({1, 2}, {0.6, 0.8}));
    EXPECT_NEAR(norm_of(unit, 0, 2), 0.5, 1e-12);
    EXPECT_NEAR(unit[0] / unit[1], 0.75, 1e-12);
    const auto three = squash(Tensor({1, 3}, {0, 3, 0}));
    EXPECT_NEAR(norm_of(three, 0, 3), 0.9, 1e-12);
}

TEST(Squash, NormInUnitIntervalAndDirectionPreserved)
{
    Rng rng(21);
    const std::size_t count = 10000, d = 8;
    std::vector<double> raw(count * d);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        // Log-uniform scales cover tiny and huge norms.
        raw[i] = rng.normal() * std::pow(10.0, rng.uniform(-4.0, 4.0));
    }
    const Tensor v({count, d}, raw);
    const auto s = squash(v);
    for (std::size_t n = 0; n < count; ++n) {
        const double in = norm_of(v, n * d, d), out = norm_of(s, n * d, d);
        ASSERT_GE(out, 0.0);
        ASSERT_LT(out, 1.0);
        EXPECT_NEAR(out, in * in / (1.0 + in * in), 1e-12);
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += v[n * d + k] * s[n * d + k];
        }
        if (in > 0.0) {
            ASSERT_NEAR(dot / (in * out), 1.0, 1e-9);
        }
    }
}

TEST(Squash, Gradient)
{
    Rng rng(22);
    for (int t = 0; t < 20; ++t) {
        Tensor v = random_tensor({3, 1 + rng.below(5)}, rng, true, -2.0, 2.0);
        Tensor probe = random_tensor(v.shape(), rng);
        const auto r = check_gradients([&] { return sum(mul(squash(v), probe)); }, {v});
        EXPECT_LT(r.max_rel_error, 1e-3);
    }
}

TEST(Squash, ZeroVectorGradientIsFinite)
{
    Tensor v = Tensor::zeros({1, 3}, true);
    backward(sum(squash(v)));
    for (double g : v.grad()) {
        EXPECT_TRUE(std::isfinite(g));
    }
}

// ---------------------------------------------------------------------------
// primary capsules

TEST(PrimaryCapsules, ShapeArithmetic)
{
    Rng rng(23);
    const PrimaryCapsuleSpec spec{2, 2, 4, 8};
    PrimaryCapsules layer(8, spec, rng);
    const auto u = layer.forward(random_tensor({1, 8, 6, 6}, rng));
    EXPECT_EQ(u.shape(), (Shape{1, 36, 8}));
    EXPECT_EQ(layer.capsule_count(6), 36u);
    for (std::size_t i = 0; i < 36; ++i) {
        EXPECT_LT(norm_of(u, i * 8, 8), 1.0);
    }
}

TEST(PrimaryCapsules, RejectsSmallMapsAndOffGridSpecs)
{
    Rng rng(24);
    PrimaryCapsules layer(2, {5, 1, 2, 2}, rng);
    EXPECT_THROW(layer.forward(Tensor::zeros({1, 2, 4, 4})), ShapeError);
    EXPECT_THROW((PrimaryCapsuleSpec{4, 1, 2, 2}.validate()), std::invalid_argument);
    EXPECT_THROW((PrimaryCapsuleSpec{3, 3, 2, 2}.validate()), std::invalid_argument);
}

TEST(PrimaryCapsules, CapsuleGroupsConvChannels)
{
    // Capsule (c, y, x) collects conv channels c*dim .. c*dim+dim-1 at (y, x).
    Rng rng(25);
    const PrimaryCapsuleSpec spec{2, 2, 2, 3};
    const auto f = random_tensor({1, 2, 4, 4}, rng);
    const auto w = random_tensor({6, 2, 2, 2}, rng);
    const auto b = random_tensor({6}, rng);
    const auto conv = conv2d(f, w, b, 2, 0);
    const auto u = primary_capsules(f, spec, w, b);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t p = 0; p < 4; ++p) {
            Vec raw(3);
            for (std::size_t k = 0; k < 3; ++k) {
                raw[k] = conv[(c * 3 + k) * 4 + p];
            }
            const auto want = scalar_squash(raw);
            for (std::size_t k = 0; k < 3; ++k) {
                EXPECT_NEAR(u[(c * 4 + p) * 3 + k], want[k], 1e-12);
            }
        }
    }
}

TEST(PrimaryCapsules, Gradient)
{
    Rng rng(26);
    for (int t = 0; t < 20; ++t) {
        const PrimaryCapsuleSpec spec{t % 2 == 0 ? 2u : 3u, 1 + static_cast<std::size_t>(t % 2), 2, 3};
        Tensor f = random_tensor({1, 2, 5, 5}, rng, true);
        Tensor w = random_tensor({6, 2, spec.kernel_size, spec.kernel_size}, rng, true, -0.5, 0.5);
        Tensor b = random_tensor({6}, rng, true, -0.5, 0.5);
        Tensor probe = random_tensor(primary_capsules(f, spec, w, b).shape(), rng);
        const auto r = check_gradients([&] { return sum(mul(primary_capsules(f, spec, w, b), probe)); }, {f, w, b});
        EXPECT_LT(r.max_rel_error, 1e-3);
    }
}

// ---------------------------------------------------------------------------
// routing

TEST(Routing, SingleIterationIsUniformMixture)
{
    Rng rng(27);
    const ClassCapsuleSpec spec{3, 4, 1};
    const auto u = random_tensor({2, 5, 3}, rng);
    const auto W = random_tensor({5, 3, 4, 3}, rng);
    RoutingTrace trace;
    const auto v = route(u, spec, W, &trace);
    ASSERT_EQ(trace.couplings.size(), 1u);
    for (double c : trace.couplings[0].values()) {
        EXPECT_NEAR(c, 1.0 / 3.0, 1e-15);
    }
    const auto uhat = capsule_transform(u, W);
    const auto want = squash(scale(sum_axis(uhat, 1), 1.0 / 3.0));
    ASSERT_EQ(v.shape(), want.shape());
    for (std::size_t i = 0; i < v.numel(); ++i) {
        EXPECT_NEAR(v[i], want[i], 1e-12);
    }
}

TEST(Routing, CouplingRowsSumToOneEveryIteration)
{
    Rng rng(28);
    for (int t = 0; t < 50; ++t) {
        const ClassCapsuleSpec spec{2 + rng.below(8), 1 + rng.below(6), 1 + rng.below(5)};
        const std::size_t n = 1 + rng.below(3), in = 1 + rng.below(12), din = 1 + rng.below(6);
        const auto u = random_tensor({n, in, din}, rng, false, -3.0, 3.0);
        const auto W = random_tensor({in, spec.num_classes, spec.out_dim, din}, rng, false, -3.0, 3.0);
        RoutingTrace trace;
        const auto v = route(u, spec, W, &trace);
        ASSERT_EQ(trace.couplings.size(), spec.routing_iters);
        for (const auto& c : trace.couplings) {
            for (std::size_t row = 0; row < n * in; ++row) {
                double s = 0.0;
                for (std::size_t j = 0; j < spec.num_classes; ++j) {
                    s += c[row * spec.num_classes + j];
                }
                ASSERT_NEAR(s, 1.0, 1e-6);
            }
        }
        for (std::size_t j = 0; j < n * spec.num_classes; ++j) {
            EXPECT_LT(norm_of(v, j * spec.out_dim, spec.out_dim), 1.0);
        }
    }
}

TEST(Routing, ZeroTransformGivesZeroOutput)
{
    Rng rng(29);
    for (int t = 0; t < 20; ++t) {
        const ClassCapsuleSpec spec{4, 3, 1 + rng.below(4)};
        const auto u = random_tensor({2, 6, 5}, rng, false, -10.0, 10.0);
        const auto v = route(u, spec, Tensor::zeros({6, 4, 3, 5}));
        for (double x : v.values()) {
            ASSERT_EQ(x, 0.0);
        }
    }
}

TEST(Routing, MatchesScalarRecurrence)
{
    // 2 input capsules, 2 classes, 2 iterations, hand-sized W.
    const std::vector<Vec> u = {{0.5, -0.2}, {0.1, 0.4}};
    const std::vector<std::vector<std::vector<Vec>>> W = {
        {{{1.0, 0.5}, {-0.3, 0.8}}, {{0.2, -1.0}, {0.7, 0.1}}},
        {{{-0.6, 0.4}, {0.9, 0.3}}, {{1.1, 0.0}, {-0.2, 0.5}}},
    };
    std::vector<double> wflat;
    for (const auto& wi : W) {
        for (const auto& wij : wi) {
            for (const auto& row : wij) {
                wflat.insert(wflat.end(), row.begin(), row.end());
            }
        }
    }
    const auto v = route(Tensor({1, 2, 2}, {0.5, -0.2, 0.1, 0.4}), {2, 2, 2}, Tensor({2, 2, 2, 2}, wflat));
    const auto want = scalar_route(u, W, 2);
    for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t o = 0; o < 2; ++o) {
            EXPECT_NEAR(v[j * 2 + o], want[j][o], 1e-12);
        }
    }
}

TEST(Routing, MatchesScalarRecurrenceOnRandomInstances)
{
    Rng rng(30);
    for (int t = 0; t < 30; ++t) {
        const std::size_t I = 1 + rng.below(5), J = 2 + rng.below(3), din = 1 + rng.below(4), dout = 1 + rng.below(4);
        const std::size_t iters = 1 + rng.below(4);
        const auto ut = random_tensor({1, I, din}, rng, false, -2.0, 2.0);
        const auto Wt = random_tensor({I, J, dout, din}, rng, false, -2.0, 2.0);
        std::vector<Vec> u(I, Vec(din));
        std::vector<std::vector<std::vector<Vec>>> W(I, std::vector<std::vector<Vec>>(J, std::vector<Vec>(dout, Vec(din))));
        for (std::size_t i = 0; i < I; ++i) {
            for (std::size_t k = 0; k < din; ++k) {
                u[i][k] = ut[i * din + k];
                for (std::size_t j = 0; j < J; ++j) {
                    for (std::size_t o = 0; o < dout; ++o) {
                        W[i][j][o][k] = Wt[((i * J + j) * dout + o) * din + k];
                    }
                }
            }
        }
        const auto v = route(ut, {J, dout, iters}, Wt);
        const auto want = scalar_route(u, W, iters);
        for (std::size_t j = 0; j < J; ++j) {
            for (std::size_t o = 0; o < dout; ++o) {
                EXPECT_NEAR(v[j * dout + o], want[j][o], 1e-12);
            }
        }
    }
}

TEST(Routing, Errors)
{
    EXPECT_THROW(route(Tensor::zeros({1, 2, 3}), {2, 2, 0}, Tensor::zeros({2, 2, 2, 3})), std::invalid_argument);
    EXPECT_THROW(route(Tensor::zeros({1, 2, 3}), {2, 2, 1}, Tensor::zeros({2, 2, 2, 4})), ShapeError);
    EXPECT_THROW(route(Tensor::zeros({1, 2, 3}), {3, 2, 1}, Tensor::zeros({2, 2, 2, 3})), ShapeError);
}

TEST(Routing, Gradient)
{
    Rng rng(31);
    for (int t = 0; t < 20; ++t) {
        const ClassCapsuleSpec spec{2 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3)};
        const std::size_t I = 1 + rng.below(4), din = 1 + rng.below(3);
        Tensor u = random_tensor({2, I, din}, rng, true);
        Tensor W = random_tensor({I, spec.num_classes, spec.out_dim, din}, rng, true);
        Tensor probe = random_tensor({2, spec.num_classes, spec.out_dim}, rng);
        const auto r = check_gradients([&] { return sum(mul(route(u, spec, W), probe)); }, {u, W});
        EXPECT_LT(r.max_rel_error, 1e-3);
    }
}

TEST(Routing, LogitsResetEveryCall)
{
    Rng rng(32);
    const auto u = random_tensor({1, 4, 3}, rng);
    const auto W = random_tensor({4, 3, 2, 3}, rng);
    const auto a = route(u, {3, 2, 3}, W);
    const auto b = route(u, {3, 2, 3}, W);
    EXPECT_EQ(std::vector<double>(a.values().begin(), a.values().end()),
              std::vector<double>(b.values().begin(), b.values().end()));
}

// ---------------------------------------------------------------------------
// margin loss and prediction

TEST(MarginLoss, Examples)
{
    const auto separated = capsules_with_norms({0.95, 0.05, 0.1}, 1, 3, 2);
    EXPECT_DOUBLE_EQ(margin_loss(separated, one_hot({0}, 3)).item(), 0.0);
    const auto dead = capsules_with_norms({0, 0, 0, 0, 0, 0}, 2, 3, 2);
    EXPECT_NEAR(margin_loss(dead, one_hot({1, 2}, 3)).item(), 0.81, 1e-15);
    EXPECT_EQ(capsule_predict(separated), (std::vector<std::size_t>{0}));
}

TEST(MarginLoss, MatchesScalarFormula)
{
    Rng rng(33);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng.below(5), k = 2 + rng.below(8), d = 1 + rng.below(4);
        const auto v = random_tensor({n, k, d}, rng, false, -0.7, 0.7);
        std::vector<std::size_t> labels(n);
        std::vector<double> norms(n * k);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = rng.below(k);
        }
        for (std::size_t i = 0; i < n * k; ++i) {
            norms[i] = norm_of(v, i * d, d);
        }
        const double got = margin_loss(v, one_hot(labels, k)).item();
        EXPECT_NEAR(got, scalar_margin(norms, labels, k), 1e-6);
        EXPECT_GE(got, 0.0);
    }
}

TEST(MarginLoss, RejectsNonOneHotTargets)
{
    const auto v = Tensor::zeros({1, 3, 2});
    EXPECT_THROW(margin_loss(v, Tensor({1, 3}, {1, 1, 0})), std::invalid_argument);
    EXPECT_THROW(margin_loss(v, Tensor({1, 3}, {0.5, 0.5, 0})), std::invalid_argument);
    EXPECT_THROW(margin_loss(v, Tensor({1, 3}, {0, 0, 0})), std::invalid_argument);
    EXPECT_THROW(margin_loss(v, Tensor({1, 2}, {1, 0})), ShapeError);
}

TEST(MarginLoss, Gradient)
{
    Rng rng(34);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 1 + rng.below(3), k = 2 + rng.below(4);
        Tensor v = random_tensor({n, k, 3}, rng, true, -0.6, 0.6);
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) {
            l = rng.below(k);
        }
        const auto targets = one_hot(labels, k);
        const auto r = check_gradients([&] { return margin_loss(v, targets); }, {v}, 1e-6);
        EXPECT_LT(r.max_rel_error, 1e-3);
    }
}

TEST(CapsulePredict, ArgmaxWithLowIndexTies)
{
    EXPECT_EQ(capsule_predict(capsules_with_norms({0.1, 0.9, 0.2}, 1, 3, 2)), (std::vector<std::size_t>{1}));
    EXPECT_EQ(capsule_predict(capsules_with_norms({0.4, 0.4, 0.4, 0.3, 0.5, 0.5}, 2, 3, 1)),
              (std::vector<std::size_t>{0, 1}));
}

TEST(CapsuleNetwork, EndToEndGradient)
{
    Rng rng(35);
    for (int t = 0; t < 20; ++t) {
        const PrimaryCapsuleSpec ps{2, 2, 2, 3};
        const ClassCapsuleSpec cs{3, 4, 3};
        Tensor f = random_tensor({2, 2, 4, 4}, rng, true);
        Tensor pw = random_tensor({6, 2, 2, 2}, rng, true);
        Tensor pb = random_tensor({6}, rng, true, -0.1, 0.1);
        Tensor W = random_tensor({8, 3, 4, 3}, rng, true);
        const auto targets = one_hot({rng.below(3), rng.below(3)}, 3);
        const auto r = check_gradients(
            [&] { return margin_loss(route(primary_capsules(f, ps, pw, pb), cs, W), targets); }, {f, pw, pb, W},
            1e-6);
        EXPECT_LT(r.max_rel_error, 1e-3) << "instance " << t;
    }
}

TEST(CapsuleLayers, ParameterRegistration)
{
    Rng rng(36);
    PrimaryCapsules primary(4, {3, 1, 2, 8}, rng);
    ClassCapsules classes(18, 8, {9, 16, 3}, rng);
    ModelGraph g;
    primary.register_params(g, "capsules.primary");
    classes.register_params(g, "capsules.class");
    EXPECT_EQ(g.layer_count(), 2u);
    EXPECT_EQ(classes.weight().shape(), (Shape{18, 9, 16, 8}));
    const auto v = classes.forward(primary.forward(random_tensor({1, 4, 5, 5}, rng)));
    EXPECT_EQ(v.shape(), (Shape{1, 9, 16}));
}
