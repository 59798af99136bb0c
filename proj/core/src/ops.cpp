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

#include "hycaps/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hycaps {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

Shape strip_leading_ones(const Shape& s)
{
    std::size_t i = 0;
    while (i + 1 < s.size() && s[i] == 1) {
        ++i;
    }
    return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big)
{
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct BroadcastPlan
{
    Shape out;
    std::size_t a_period;  // a[i % a_period]
    std::size_t b_period;
};

BroadcastPlan plan_broadcast(std::string_view kind, const Tensor& a, const Tensor& b)
{
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const auto na = a.numel();
    const auto nb = b.numel();
    if (sa == sb) {
        return {sa, na, nb};
    }
    auto ta = strip_leading_ones(sa);
    auto tb = strip_leading_ones(sb);
    if (na >= nb && is_suffix(tb, sa)) {
        return {na == nb && sb.size() > sa.size() ? sb : sa, na, nb};
    }
    if (nb > na && is_suffix(ta, sb)) {
        return {sb, na, nb};
    }
    throw ShapeError(std::string(kind) + ": incompatible shapes " + shape_str(sa) + " and " +
                     shape_str(sb));
}

// Folds a full-size gradient onto an operand that was repeated with `period`.
std::vector<double> fold(std::span<const double> g, std::size_t period)
{
    std::vector<double> out(period, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        out[i % period] += g[i];
    }
    return out;
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(std::string kind, const Tensor& a, const Tensor& b, Fwd f, DA da, DB db)
{
    auto plan = plan_broadcast(kind, a, b);
    const auto n = num_elements(plan.out);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(av[i % plan.a_period], bv[i % plan.b_period]);
    }
    return make_result(
        std::move(kind), plan.out, std::move(out), {a, b},
        [plan, da, db](const TensorImpl& res, std::vector<Tensor>& in) {
            const auto& g = res.grad;
            const auto x = in[0].values();
            const auto y = in[1].values();
            const auto n = g.size();
            for (int side = 0; side < 2; ++side) {
                if (!in[side].requires_grad()) {
                    continue;
                }
                std::vector<double> full(n);
                for (std::size_t i = 0; i < n; ++i) {
                    double xa = x[i % plan.a_period];
                    double yb = y[i % plan.b_period];
                    full[i] = g[i] * (side == 0 ? da(xa, yb) : db(xa, yb));
                }
                auto period = side == 0 ? plan.a_period : plan.b_period;
                if (period == n) {
                    accumulate_grad(in[side], full);
                } else {
                    accumulate_grad(in[side], fold(full, period));
                }
            }
        });
}

template <typename Fwd, typename Deriv>
Tensor unary(std::string kind, const Tensor& x, Fwd f, Deriv d)
{
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    return make_result(std::move(kind), x.shape(), std::move(out), {x},
                       [d](const TensorImpl& res, std::vector<Tensor>& in) {
                           const auto& g = res.grad;
                           const auto xs = in[0].values();
                           std::vector<double> gi(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gi[i] = g[i] * d(xs[i], res.values[i]);
                           }
                           accumulate_grad(in[0], gi);
                       });
}

struct AxisSplit
{
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(std::string_view kind, const Shape& shape, std::size_t axis)
{
    if (axis >= shape.size()) {
        throw ShapeError(std::string(kind) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

}  // namespace

std::string_view to_string(OpKind kind)
{
    switch (kind) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::matmul: return "matmul";
    case OpKind::neg: return "neg";
    case OpKind::relu: return "relu";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sqrt: return "sqrt";
    case OpKind::square: return "square";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    }
    return "unknown";
}

Tensor forward_op(OpKind kind, std::span<const Tensor> inputs)
{
    const bool is_binary = kind == OpKind::add || kind == OpKind::sub || kind == OpKind::mul ||
                           kind == OpKind::div || kind == OpKind::matmul;
    const std::size_t arity = is_binary ? 2 : 1;
    if (inputs.size() != arity) {
        throw std::invalid_argument(std::string(to_string(kind)) + ": expected " +
                                    std::to_string(arity) + " inputs, got " +
                                    std::to_string(inputs.size()));
    }
    switch (kind) {
    case OpKind::add: return add(inputs[0], inputs[1]);
    case OpKind::sub: return sub(inputs[0], inputs[1]);
    case OpKind::mul: return mul(inputs[0], inputs[1]);
    case OpKind::div: return div(inputs[0], inputs[1]);
    case OpKind::matmul: return matmul(inputs[0], inputs[1]);
    case OpKind::neg: return neg(inputs[0]);
    case OpKind::relu: return relu(inputs[0]);
    case OpKind::exp: return exp(inputs[0]);
    case OpKind::log: return log(inputs[0]);
    case OpKind::sqrt: return sqrt(inputs[0]);
    case OpKind::square: return square(inputs[0]);
    case OpKind::sum: return sum(inputs[0]);
    case OpKind::mean: return mean(inputs[0]);
    }
    throw std::invalid_argument("unknown op kind");
}

Tensor add(const Tensor& a, const Tensor& b)
{
    return binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b)
{
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& x)
{
    return unary(
        "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor)
{
    return unary(
        "scale", x, [factor](double v) { return factor * v; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset)
{
    return unary(
        "add_scalar", x, [offset](double v) { return v + offset; },
        [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x)
{
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x)
{
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x)
{
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x)
{
    return unary(
        "sqrt", x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x)
{
    return unary(
        "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x)
{
    const auto xv = x.values();
    double total = std::accumulate(xv.begin(), xv.end(), 0.0);
    return make_result("sum", {1}, {total}, {x},
                       [](const TensorImpl& res, std::vector<Tensor>& in) {
                           std::vector<double> g(in[0].numel(), res.grad[0]);
                           accumulate_grad(in[0], g);
                       });
}

Tensor mean(const Tensor& x)
{
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis)
{
    auto s = split_axis("sum_axis", x.shape(), axis);
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i) {
        if (i != axis) {
            out_shape.push_back(x.shape()[i]);
        }
    }
    if (out_shape.empty()) {
        out_shape.push_back(1);
    }
    const auto xv = x.values();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 0; k < s.extent; ++k) {
            const double* row = xv.data() + (o * s.extent + k) * s.inner;
            double* dst = out.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) {
                dst[i] += row[i];
            }
        }
    }
    return make_result("sum_axis", out_shape, std::move(out), {x},
                       [s](const TensorImpl& res, std::vector<Tensor>& in) {
                           std::vector<double> g(in[0].numel());
                           for (std::size_t o = 0; o < s.outer; ++o) {
                               for (std::size_t k = 0; k < s.extent; ++k) {
                                   for (std::size_t i = 0; i < s.inner; ++i) {
                                       g[(o * s.extent + k) * s.inner + i] =
                                           res.grad[o * s.inner + i];
                                   }
                               }
                           }
                           accumulate_grad(in[0], g);
                       });
}

Tensor reshape(const Tensor& x, Shape shape)
{
    if (num_elements(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_result("reshape", std::move(shape), std::move(out), {x},
                       [](const TensorImpl& res, std::vector<Tensor>& in) {
                           accumulate_grad(in[0], res.grad);
                       });
}

Tensor flatten(const Tensor& x)
{
    if (x.rank() < 2) {
        throw ShapeError("flatten: expected a batched tensor, got " + shape_str(x.shape()));
    }
    return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor permute(const Tensor& x, std::span<const std::size_t> order)
{
    const auto& in_shape = x.shape();
    const auto rank = in_shape.size();
    if (order.size() != rank) {
        throw ShapeError("permute: order has " + std::to_string(order.size()) +
                         " axes for shape " + shape_str(in_shape));
    }
    std::vector<bool> seen(rank, false);
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (order[i] >= rank || seen[order[i]]) {
            throw ShapeError("permute: invalid axis order for shape " + shape_str(in_shape));
        }
        seen[order[i]] = true;
        out_shape[i] = in_shape[order[i]];
    }
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) {
        in_strides[i - 1] = in_strides[i] * in_shape[i];
    }
    // source offset for each output element
    const auto n = x.numel();
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < rank; ++i) {
            off += idx[i] * in_strides[order[i]];
        }
        src[flat] = off;
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out_shape[i]) {
                break;
            }
            idx[i] = 0;
        }
    }
    const auto xv = x.values();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = xv[src[i]];
    }
    return make_result("permute", out_shape, std::move(out), {x},
                       [src = std::move(src)](const TensorImpl& res, std::vector<Tensor>& in) {
                           std::vector<double> g(res.grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               g[src[i]] = res.grad[i];
                           }
                           accumulate_grad(in[0], g);
                       });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis)
{
    if (parts.empty()) {
        throw std::invalid_argument("concat: no inputs");
    }
    const auto& first = parts[0].shape();
    if (axis >= first.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> chunk;  // contiguous run per outer index, per part
    for (const auto& p : parts) {
        const auto& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            ok = i == axis || s[i] == first[i];
        }
        if (!ok) {
            throw ShapeError("concat: shape " + shape_str(s) + " does not match " +
                             shape_str(first) + " off axis " + std::to_string(axis));
        }
        out_shape[axis] += s[axis];
        chunk.push_back(split_axis("concat", s, axis).extent * split_axis("concat", s, axis).inner);
    }
    const auto outer = split_axis("concat", first, axis).outer;
    const std::size_t row = std::accumulate(chunk.begin(), chunk.end(), std::size_t{0});
    std::vector<double> out(outer * row);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto pv = parts[p].values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.data() + o * chunk[p], chunk[p], out.data() + o * row + offset);
        }
        offset += chunk[p];
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result("concat", out_shape, std::move(out), std::move(inputs),
                       [chunk, outer, row](const TensorImpl& res, std::vector<Tensor>& in) {
                           std::size_t offset = 0;
                           for (std::size_t p = 0; p < in.size(); ++p) {
                               if (in[p].requires_grad()) {
                                   std::vector<double> g(outer * chunk[p]);
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       std::copy_n(res.grad.data() + o * row + offset, chunk[p],
                                                   g.data() + o * chunk[p]);
                                   }
                                   accumulate_grad(in[p], g);
                               }
                               offset += chunk[p];
                           }
                       });
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    std::vector<double> out(static_cast<std::size_t>(m * n));
    Map(out.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
    return make_result(
        "matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b},
        [m, k, n](const TensorImpl& res, std::vector<Tensor>& in) {
            ConstMap g(res.grad.data(), m, n);
            if (in[0].requires_grad()) {
                std::vector<double> ga(static_cast<std::size_t>(m * k));
                Map(ga.data(), m, k).noalias() = g * ConstMap(in[1].values().data(), k, n).transpose();
                accumulate_grad(in[0], ga);
            }
            if (in[1].requires_grad()) {
                std::vector<double> gb(static_cast<std::size_t>(k * n));
                Map(gb.data(), k, n).noalias() = ConstMap(in[0].values().data(), m, k).transpose() * g;
                accumulate_grad(in[1], gb);
            }
        });
}

Tensor softmax(const Tensor& x, std::size_t axis)
{
    auto s = split_axis("softmax", x.shape(), axis);
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < s.extent; ++k) {
                mx = std::max(mx, xv[base + k * s.inner]);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                double e = std::exp(xv[base + k * s.inner] - mx);
                out[base + k * s.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < s.extent; ++k) {
                out[base + k * s.inner] /= z;
            }
        }
    }
    return make_result("softmax", x.shape(), std::move(out), {x},
                       [s](const TensorImpl& res, std::vector<Tensor>& in) {
                           const auto& y = res.values;
                           const auto& g = res.grad;
                           std::vector<double> gi(y.size());
                           for (std::size_t o = 0; o < s.outer; ++o) {
                               for (std::size_t i = 0; i < s.inner; ++i) {
                                   const std::size_t base = o * s.extent * s.inner + i;
                                   double dot = 0.0;
                                   for (std::size_t k = 0; k < s.extent; ++k) {
                                       dot += g[base + k * s.inner] * y[base + k * s.inner];
                                   }
                                   for (std::size_t k = 0; k < s.extent; ++k) {
                                       auto j = base + k * s.inner;
                                       gi[j] = y[j] * (g[j] - dot);
                                   }
                               }
                           }
                           accumulate_grad(in[0], gi);
                       });
}

Tensor log_softmax(const Tensor& x, std::size_t axis)
{
    auto s = split_axis("log_softmax", x.shape(), axis);
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < s.extent; ++k) {
                mx = std::max(mx, xv[base + k * s.inner]);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                z += std::exp(xv[base + k * s.inner] - mx);
            }
            const double lse = mx + std::log(z);
            for (std::size_t k = 0; k < s.extent; ++k) {
                out[base + k * s.inner] = xv[base + k * s.inner] - lse;
            }
        }
    }
    return make_result("log_softmax", x.shape(), std::move(out), {x},
                       [s](const TensorImpl& res, std::vector<Tensor>& in) {
                           const auto& y = res.values;
                           const auto& g = res.grad;
                           std::vector<double> gi(y.size());
                           for (std::size_t o = 0; o < s.outer; ++o) {
                               for (std::size_t i = 0; i < s.inner; ++i) {
                                   const std::size_t base = o * s.extent * s.inner + i;
                                   double gsum = 0.0;
                                   for (std::size_t k = 0; k < s.extent; ++k) {
                                       gsum += g[base + k * s.inner];
                                   }
                                   for (std::size_t k = 0; k < s.extent; ++k) {
                                       auto j = base + k * s.inner;
                                       gi[j] = g[j] - std::exp(y[j]) * gsum;
                                   }
                               }
                           }
                           accumulate_grad(in[0], gi);
                       });
}

Tensor cross_entropy(const Tensor& logits, const Tensor& one_hot)
{
    if (logits.rank() != 2 || logits.shape() != one_hot.shape()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) +
                         " and targets " + shape_str(one_hot.shape()) + " must be equal [N,K]");
    }
    auto nll = neg(sum(mul(one_hot, log_softmax(logits, 1))));
    return scale(nll, 1.0 / static_cast<double>(logits.dim(0)));
}

Tensor take_rows(const Tensor& x, std::span<const std::size_t> indices)
{
    if (indices.empty()) {
        throw ShapeError("take_rows: empty index list");
    }
    const auto row = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = indices.size();
    std::vector<double> out(indices.size() * row);
    const auto xv = x.values();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= x.dim(0)) {
            throw ShapeError("take_rows: index " + std::to_string(indices[i]) +
                             " out of range for " + shape_str(x.shape()));
        }
        std::copy_n(xv.data() + indices[i] * row, row, out.data() + i * row);
    }
    return Tensor(std::move(shape), std::move(out));
}

}  // namespace hycaps
