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

#include "hycaps/tensor.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

namespace hycaps {

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape)
{
    if (shape.empty()) {
        throw ShapeError("tensor shape must have at least one extent");
    }
    for (auto extent : shape) {
        if (extent == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
}

}  // namespace

std::size_t num_elements(const Shape& shape)
{
    std::size_t n = 1;
    for (auto extent : shape) {
        n *= extent;
    }
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            s += ",";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
{
    check_shape(shape);
    if (num_elements(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " needs " +
                         std::to_string(num_elements(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    check_shape(shape);
    auto n = num_elements(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return Tensor({1}, {value}, requires_grad);
}

TensorImpl& Tensor::impl()
{
    if (!impl_) {
        throw std::logic_error("use of an undefined tensor");
    }
    return *impl_;
}

const TensorImpl& Tensor::impl() const
{
    if (!impl_) {
        throw std::logic_error("use of an undefined tensor");
    }
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const
{
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::span<const double> Tensor::values() const { return impl().values; }

std::span<double> Tensor::data() { return impl().values; }

double Tensor::item() const
{
    if (numel() != 1) {
        throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    }
    return values()[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool flag)
{
    auto& d = impl();
    if (d.node) {
        throw std::logic_error("requires_grad can only be changed on leaf tensors");
    }
    d.requires_grad = flag;
    if (!flag) {
        d.grad.clear();
    }
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::grad_buffer()
{
    auto& d = impl();
    if (d.grad.empty()) {
        d.grad.assign(d.values.size(), 0.0);
    }
    return d.grad;
}

void Tensor::zero_grad()
{
    auto& d = impl();
    std::fill(d.grad.begin(), d.grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return impl().node == nullptr; }

std::string_view Tensor::producer_kind() const
{
    const auto& d = impl();
    return d.node ? std::string_view(d.node->kind) : std::string_view("leaf");
}

Tensor Tensor::detach() const
{
    const auto& d = impl();
    return Tensor(d.shape, d.values, false);
}

Tensor make_result(std::string kind, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, BackwardFn backward)
{
    check_shape(shape);
    if (num_elements(shape) != values.size()) {
        throw ShapeError(kind + ": produced " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    bool track = false;
    if (g_grad_enabled) {
        track = std::any_of(inputs.begin(), inputs.end(),
                            [](const Tensor& t) { return t.requires_grad(); });
    }
    if (track) {
        impl->requires_grad = true;
        impl->node = std::make_shared<GraphNode>(
            GraphNode{std::move(kind), std::move(inputs), std::move(backward)});
    }
    return Tensor(std::move(impl));
}

void accumulate_grad(Tensor& t, std::span<const double> g)
{
    if (!t.requires_grad()) {
        return;
    }
    auto buf = t.grad_buffer();
    if (buf.size() != g.size()) {
        throw ShapeError("gradient size mismatch for shape " + shape_str(t.shape()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        buf[i] += g[i];
    }
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

// Post-order DFS over producing nodes, iterative to survive deep graphs.
std::vector<TensorImpl*> topological_order(TensorImpl* root)
{
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    if (!root->node) {
        return order;
    }
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        auto& inputs = t->node->inputs;
        if (next < inputs.size()) {
            TensorImpl* child = &inputs[next++].impl();
            if (child->node && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

GraphTape record_tape(const Tensor& root)
{
    GraphTape tape;
    auto order = topological_order(const_cast<TensorImpl*>(&root.impl()));
    tape.records.reserve(order.size());
    for (auto* t : order) {
        TapeRecord rec;
        rec.kind = t->node->kind;
        rec.output = t;
        for (auto& in : t->node->inputs) {
            rec.inputs.push_back(&in.impl());
        }
        tape.records.push_back(std::move(rec));
    }
    return tape;
}

void backward(const Tensor& loss)
{
    const auto& root_const = loss.impl();
    if (root_const.values.size() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root_const.shape));
    }
    auto* root = const_cast<TensorImpl*>(&root_const);
    if (!root->requires_grad) {
        throw std::logic_error("backward() on a loss that does not require grad");
    }
    if (root->grad.empty()) {
        root->grad.assign(1, 0.0);
    }
    root->grad[0] += 1.0;

    auto order = topological_order(root);
    // consumed nodes stay alive until the pass ends: they own the inputs that
    // later records still point at
    std::vector<std::shared_ptr<GraphNode>> consumed;
    consumed.reserve(order.size());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        auto& node = consumed.emplace_back(std::move(t->node));
        if (!t->grad.empty()) {
            node->backward(*t, node->inputs);
        }
        // intermediate results never retain gradients
        t->grad.clear();
        t->grad.shrink_to_fit();
        t->requires_grad = false;
    }
}

}  // namespace hycaps
