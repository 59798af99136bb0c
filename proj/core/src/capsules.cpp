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

#include "hycaps/capsules.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

#include "hycaps/ops.hpp"

namespace hycaps {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedConst = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using Strided = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

bool one_of(std::size_t v, std::initializer_list<std::size_t> allowed)
{
    for (auto a : allowed) {
        if (a == v) {
            return true;
        }
    }
    return false;
}

}  // namespace

void PrimaryCapsuleSpec::validate() const
{
    if (!one_of(kernel_size, {2, 3, 5})) {
        throw std::invalid_argument("primary capsule kernel size must be one of {2,3,5}, got " +
                                    std::to_string(kernel_size));
    }
    if (!one_of(stride, {1, 2})) {
        throw std::invalid_argument("primary capsule stride must be one of {1,2}, got " +
                                    std::to_string(stride));
    }
    if (num_capsule_channels == 0 || capsule_dim == 0) {
        throw std::invalid_argument("primary capsule channels and dimension must be positive");
    }
}

void ClassCapsuleSpec::validate() const
{
    if (num_classes == 0 || out_dim == 0) {
        throw std::invalid_argument("class capsule count and dimension must be positive");
    }
    if (routing_iters < 1) {
        throw std::invalid_argument("routing needs at least one iteration");
    }
}

Tensor squash(const Tensor& v)
{
    const std::size_t d = v.shape().back();
    const std::size_t rows = v.numel() / d;
    const auto x = v.values();
    std::vector<double> out(x.size());
    std::vector<double> lens(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = x.data() + r * d;
        double n2 = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            n2 += p[k] * p[k];
        }
        const double len = std::sqrt(n2);
        lens[r] = len;
        const double f = len / (1.0 + n2);
        for (std::size_t k = 0; k < d; ++k) {
            out[r * d + k] = p[k] * f;
        }
    }
    return make_result(
        "squash", v.shape(), std::move(out), {v},
        [d, rows, lens = std::move(lens)](const TensorImpl& res, std::vector<Tensor>& in) {
            const auto x = in[0].values();
            std::vector<double> gi(x.size(), 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
                const double len = lens[r];
                if (len == 0.0) {
                    continue;
                }
                const double* p = x.data() + r * d;
                const double* g = res.grad.data() + r * d;
                const double n2 = len * len;
                const double f = len / (1.0 + n2);
                const double df = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
                double vg = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    vg += p[k] * g[k];
                }
                const double c = df / len * vg;
                for (std::size_t k = 0; k < d; ++k) {
                    gi[r * d + k] = f * g[k] + c * p[k];
                }
            }
            accumulate_grad(in[0], gi);
        });
}

Tensor capsule_lengths(const Tensor& v)
{
    if (v.rank() < 2) {
        throw ShapeError("capsule_lengths: expected [..., D], got " + shape_str(v.shape()));
    }
    const std::size_t d = v.shape().back();
    const std::size_t rows = v.numel() / d;
    Shape out_shape(v.shape().begin(), v.shape().end() - 1);
    const auto x = v.values();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double n2 = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            n2 += x[r * d + k] * x[r * d + k];
        }
        out[r] = std::sqrt(n2);
    }
    return make_result("capsule_lengths", out_shape, std::move(out), {v},
                       [d, rows](const TensorImpl& res, std::vector<Tensor>& in) {
                           const auto x = in[0].values();
                           std::vector<double> gi(x.size(), 0.0);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double len = res.values[r];
                               if (len == 0.0) {
                                   continue;
                               }
                               const double s = res.grad[r] / len;
                               for (std::size_t k = 0; k < d; ++k) {
                                   gi[r * d + k] = s * x[r * d + k];
                               }
                           }
                           accumulate_grad(in[0], gi);
                       });
}

Tensor capsule_transform(const Tensor& u, const Tensor& W)
{
    if (u.rank() != 3 || W.rank() != 4 || W.dim(0) != u.dim(1) || W.dim(3) != u.dim(2)) {
        throw ShapeError("capsule_transform: inputs " + shape_str(u.shape()) +
                         " and transform " + shape_str(W.shape()) + " do not agree");
    }
    const auto N = static_cast<Eigen::Index>(u.dim(0));
    const auto I = static_cast<Eigen::Index>(u.dim(1));
    const auto din = static_cast<Eigen::Index>(u.dim(2));
    const auto J = static_cast<Eigen::Index>(W.dim(1));
    const auto dout = static_cast<Eigen::Index>(W.dim(2));
    const auto JD = J * dout;
    std::vector<double> out(static_cast<std::size_t>(N * I * JD));
    for (Eigen::Index i = 0; i < I; ++i) {
        StridedConst ui(u.values().data() + i * din, N, din, Eigen::OuterStride<>(I * din));
        ConstMap wi(W.values().data() + i * JD * din, JD, din);
        Strided oi(out.data() + i * JD, N, JD, Eigen::OuterStride<>(I * JD));
        oi.noalias() = ui * wi.transpose();
    }
    return make_result(
        "capsule_transform", {u.dim(0), u.dim(1), W.dim(1), W.dim(2)}, std::move(out), {u, W},
        [=](const TensorImpl& res, std::vector<Tensor>& in) {
            const bool want_u = in[0].requires_grad();
            const bool want_w = in[1].requires_grad();
            std::vector<double> gu(want_u ? in[0].numel() : 0, 0.0);
            std::vector<double> gw(want_w ? in[1].numel() : 0, 0.0);
            for (Eigen::Index i = 0; i < I; ++i) {
                StridedConst gi(res.grad.data() + i * JD, N, JD, Eigen::OuterStride<>(I * JD));
                if (want_u) {
                    ConstMap wi(in[1].values().data() + i * JD * din, JD, din);
                    Strided gui(gu.data() + i * din, N, din, Eigen::OuterStride<>(I * din));
                    gui.noalias() = gi * wi;
                }
                if (want_w) {
                    StridedConst ui(in[0].values().data() + i * din, N, din,
                                    Eigen::OuterStride<>(I * din));
                    Map gwi(gw.data() + i * JD * din, JD, din);
                    gwi.noalias() = gi.transpose() * ui;
                }
            }
            if (want_u) {
                accumulate_grad(in[0], gu);
            }
            if (want_w) {
                accumulate_grad(in[1], gw);
            }
        });
}

Tensor routing_combine(const Tensor& c, const Tensor& u_hat)
{
    if (c.rank() != 3 || u_hat.rank() != 4 || c.dim(0) != u_hat.dim(0) ||
        c.dim(1) != u_hat.dim(1) || c.dim(2) != u_hat.dim(2)) {
        throw ShapeError("routing_combine: couplings " + shape_str(c.shape()) +
                         " and predictions " + shape_str(u_hat.shape()) + " do not agree");
    }
    const auto N = u_hat.dim(0), I = u_hat.dim(1), J = u_hat.dim(2), D = u_hat.dim(3);
    const auto cv = c.values();
    const auto uv = u_hat.values();
    std::vector<double> out(N * J * D, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < I; ++i) {
            for (std::size_t j = 0; j < J; ++j) {
                const double w = cv[(n * I + i) * J + j];
                const double* src = uv.data() + ((n * I + i) * J + j) * D;
                double* dst = out.data() + (n * J + j) * D;
                for (std::size_t k = 0; k < D; ++k) {
                    dst[k] += w * src[k];
                }
            }
        }
    }
    return make_result(
        "routing_combine", {N, J, D}, std::move(out), {c, u_hat},
        [=](const TensorImpl& res, std::vector<Tensor>& in) {
            const auto cv = in[0].values();
            const auto uv = in[1].values();
            const bool want_c = in[0].requires_grad();
            const bool want_u = in[1].requires_grad();
            std::vector<double> gc(want_c ? cv.size() : 0, 0.0);
            std::vector<double> gu(want_u ? uv.size() : 0, 0.0);
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t i = 0; i < I; ++i) {
                    for (std::size_t j = 0; j < J; ++j) {
                        const auto cij = (n * I + i) * J + j;
                        const double* g = res.grad.data() + (n * J + j) * D;
                        if (want_c) {
                            const double* u = uv.data() + cij * D;
                            double acc = 0.0;
                            for (std::size_t k = 0; k < D; ++k) {
                                acc += g[k] * u[k];
                            }
                            gc[cij] = acc;
                        }
                        if (want_u) {
                            double* dst = gu.data() + cij * D;
                            for (std::size_t k = 0; k < D; ++k) {
                                dst[k] = cv[cij] * g[k];
                            }
                        }
                    }
                }
            }
            if (want_c) {
                accumulate_grad(in[0], gc);
            }
            if (want_u) {
                accumulate_grad(in[1], gu);
            }
        });
}

Tensor routing_agreement(const Tensor& u_hat, const Tensor& v)
{
    if (u_hat.rank() != 4 || v.rank() != 3 || v.dim(0) != u_hat.dim(0) ||
        v.dim(1) != u_hat.dim(2) || v.dim(2) != u_hat.dim(3)) {
        throw ShapeError("routing_agreement: predictions " + shape_str(u_hat.shape()) +
                         " and outputs " + shape_str(v.shape()) + " do not agree");
    }
    const auto N = u_hat.dim(0), I = u_hat.dim(1), J = u_hat.dim(2), D = u_hat.dim(3);
    const auto uv = u_hat.values();
    const auto vv = v.values();
    std::vector<double> out(N * I * J);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < I; ++i) {
            for (std::size_t j = 0; j < J; ++j) {
                const double* u = uv.data() + ((n * I + i) * J + j) * D;
                const double* w = vv.data() + (n * J + j) * D;
                double acc = 0.0;
                for (std::size_t k = 0; k < D; ++k) {
                    acc += u[k] * w[k];
                }
                out[(n * I + i) * J + j] = acc;
            }
        }
    }
    return make_result(
        "routing_agreement", {N, I, J}, std::move(out), {u_hat, v},
        [=](const TensorImpl& res, std::vector<Tensor>& in) {
            const auto uv = in[0].values();
            const auto vv = in[1].values();
            const bool want_u = in[0].requires_grad();
            const bool want_v = in[1].requires_grad();
            std::vector<double> gu(want_u ? uv.size() : 0, 0.0);
            std::vector<double> gv(want_v ? vv.size() : 0, 0.0);
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t i = 0; i < I; ++i) {
                    for (std::size_t j = 0; j < J; ++j) {
                        const auto a = (n * I + i) * J + j;
                        const double g = res.grad[a];
                        const double* u = uv.data() + a * D;
                        const double* w = vv.data() + (n * J + j) * D;
                        if (want_u) {
                            for (std::size_t k = 0; k < D; ++k) {
                                gu[a * D + k] = g * w[k];
                            }
                        }
                        if (want_v) {
                            for (std::size_t k = 0; k < D; ++k) {
                                gv[(n * J + j) * D + k] += g * u[k];
                            }
                        }
                    }
                }
            }
            if (want_u) {
                accumulate_grad(in[0], gu);
            }
            if (want_v) {
                accumulate_grad(in[1], gv);
            }
        });
}

Tensor route(const Tensor& primary, const ClassCapsuleSpec& spec, const Tensor& W, RoutingTrace* trace)
{
    spec.validate();
    if (primary.rank() != 3 || W.rank() != 4 || W.dim(0) != primary.dim(1) ||
        W.dim(1) != spec.num_classes || W.dim(2) != spec.out_dim || W.dim(3) != primary.dim(2)) {
        throw ShapeError("route: primary capsules " + shape_str(primary.shape()) +
                         " and transform " + shape_str(W.shape()) + " do not agree with " +
                         std::to_string(spec.num_classes) + " classes of dim " +
                         std::to_string(spec.out_dim));
    }
    const auto u_hat = capsule_transform(primary, W);
    Tensor logits = Tensor::zeros({primary.dim(0), primary.dim(1), spec.num_classes});
    Tensor v;
    for (std::size_t r = 0; r < spec.routing_iters; ++r) {
        const auto c = softmax(logits, 2);
        if (trace != nullptr) {
            trace->logits.push_back(logits.detach());
            trace->couplings.push_back(c.detach());
        }
        v = squash(routing_combine(c, u_hat));
        if (r + 1 < spec.routing_iters) {
            logits = add(logits, routing_agreement(u_hat, v));
        }
    }
    return v;
}

Tensor primary_capsules(const Tensor& features, const PrimaryCapsuleSpec& spec,
                        const Tensor& weights, const Tensor& bias)
{
    spec.validate();
    if (features.rank() != 4) {
        throw ShapeError("primary_capsules: expected [N,C,H,W], got " + shape_str(features.shape()));
    }
    if (features.dim(2) < spec.kernel_size || features.dim(3) < spec.kernel_size) {
        throw ShapeError("primary_capsules: feature map " + shape_str(features.shape()) +
                         " is smaller than the " + std::to_string(spec.kernel_size) + "x" +
                         std::to_string(spec.kernel_size) + " kernel");
    }
    const auto expected = spec.num_capsule_channels * spec.capsule_dim;
    if (weights.rank() != 4 || weights.dim(0) != expected) {
        throw ShapeError("primary_capsules: weights " + shape_str(weights.shape()) + " must have " +
                         std::to_string(expected) + " filters");
    }
    const auto conv = conv2d(features, weights, bias, spec.stride, 0);
    const auto n = conv.dim(0), h = conv.dim(2), w = conv.dim(3);
    const auto ch = spec.num_capsule_channels, d = spec.capsule_dim;
    static constexpr std::size_t order[] = {0, 1, 3, 4, 2};
    const auto grouped = permute(reshape(conv, {n, ch, d, h, w}), order);
    return squash(reshape(grouped, {n, ch * h * w, d}));
}

Tensor margin_loss(const Tensor& v, const Tensor& targets, const MarginLossSpec& spec)
{
    if (v.rank() != 3 || targets.rank() != 2 || targets.dim(0) != v.dim(0) ||
        targets.dim(1) != v.dim(1)) {
        throw ShapeError("margin_loss: capsules " + shape_str(v.shape()) + " and targets " +
                         shape_str(targets.shape()) + " do not agree");
    }
    const auto t = targets.values();
    const auto k = targets.dim(1);
    std::vector<double> absent(t.size());
    for (std::size_t n = 0; n < targets.dim(0); ++n) {
        int ones = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const double x = t[n * k + j];
            if (x == 1.0) {
                ++ones;
            } else if (x != 0.0) {
                ones = -1;
                break;
            }
        }
        if (ones != 1) {
            throw std::invalid_argument("margin_loss: target row " + std::to_string(n) +
                                        " is not one-hot");
        }
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        absent[i] = spec.lambda * (1.0 - t[i]);
    }
    const auto lengths = capsule_lengths(v);
    const auto present_term = mul(targets, square(relu(add_scalar(neg(lengths), spec.m_plus))));
    const auto absent_term = mul(Tensor(targets.shape(), std::move(absent)),
                                 square(relu(add_scalar(lengths, -spec.m_minus))));
    return scale(sum(add(present_term, absent_term)), 1.0 / static_cast<double>(v.dim(0)));
}

std::vector<std::size_t> capsule_predict(const Tensor& v)
{
    if (v.rank() != 3) {
        throw ShapeError("capsule_predict: expected [N,J,D], got " + shape_str(v.shape()));
    }
    const auto N = v.dim(0), J = v.dim(1), D = v.dim(2);
    const auto x = v.values();
    std::vector<std::size_t> out(N, 0);
    for (std::size_t n = 0; n < N; ++n) {
        double best = -1.0;
        for (std::size_t j = 0; j < J; ++j) {
            double n2 = 0.0;
            for (std::size_t k = 0; k < D; ++k) {
                const double e = x[(n * J + j) * D + k];
                n2 += e * e;
            }
            if (n2 > best) {
                best = n2;
                out[n] = j;
            }
        }
    }
    return out;
}

PrimaryCapsules::PrimaryCapsules(std::size_t in_channels, PrimaryCapsuleSpec spec, Rng& rng)
    : spec_(spec)
{
    spec_.validate();
    const auto k = spec_.kernel_size;
    weight_ = he_uniform({spec_.num_capsule_channels * spec_.capsule_dim, in_channels, k, k},
                         in_channels * k * k, rng);
    bias_ = Tensor::zeros({spec_.num_capsule_channels * spec_.capsule_dim}, true);
}

Tensor PrimaryCapsules::forward(const Tensor& features) const
{
    return primary_capsules(features, spec_, weight_, bias_);
}

void PrimaryCapsules::register_params(ModelGraph& graph, const std::string& name) const
{
    graph.add_layer(name, {{"weight", weight_}, {"bias", bias_}});
}

std::size_t PrimaryCapsules::capsule_count(std::size_t size) const
{
    if (size < spec_.kernel_size) {
        return 0;
    }
    const auto out = (size - spec_.kernel_size) / spec_.stride + 1;
    return spec_.num_capsule_channels * out * out;
}

ClassCapsules::ClassCapsules(std::size_t num_inputs, std::size_t in_dim, ClassCapsuleSpec spec, Rng& rng)
    : spec_(spec)
{
    spec_.validate();
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + spec_.out_dim));
    std::vector<double> w(num_inputs * spec_.num_classes * spec_.out_dim * in_dim);
    for (auto& x : w) {
        x = rng.uniform(-bound, bound);
    }
    weight_ = Tensor({num_inputs, spec_.num_classes, spec_.out_dim, in_dim}, std::move(w), true);
}

Tensor ClassCapsules::forward(const Tensor& primary, RoutingTrace* trace) const
{
    return route(primary, spec_, weight_, trace);
}

void ClassCapsules::register_params(ModelGraph& graph, const std::string& name) const
{
    graph.add_layer(name, {{"weight", weight_}});
}

}  // namespace hycaps
