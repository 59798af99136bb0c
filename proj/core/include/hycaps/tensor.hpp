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
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hycaps {

using Shape = std::vector<std::size_t>;

std::size_t num_elements(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

class Tensor;
struct TensorImpl;

// Accumulates the gradient of `out` into those `inputs` that require grad.
using BackwardFn = std::function<void(const TensorImpl& out, std::vector<Tensor>& inputs)>;

struct GraphNode
{
    std::string kind;
    std::vector<Tensor> inputs;
    BackwardFn backward;
};

struct TensorImpl
{
    Shape shape;
    std::vector<double> values;     // row-major
    std::vector<double> grad;       // empty until the first accumulation
    bool requires_grad = false;
    std::shared_ptr<GraphNode> node;  // producing op; null for leaves
};

/**
 * Dense row-major N-d array of doubles that doubles as a node of a dynamically
 * built reverse-mode autodiff graph. Copies share storage (handle semantics),
 * use clone()/detach() for an independent copy.
 */
class Tensor
{
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return values().size(); }

    std::span<const double> values() const;
    // Mutable view of the stored values. Writing to a tensor that already
    // feeds a recorded graph invalidates that graph.
    std::span<double> data();
    double item() const;
    double operator[](std::size_t flat_index) const { return values()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool flag);

    bool has_grad() const;
    std::span<const double> grad() const;
    // Gradient buffer, zero-initialised on first access.
    std::span<double> grad_buffer();
    void zero_grad();

    bool is_leaf() const;
    std::string_view producer_kind() const;

    Tensor detach() const;
    Tensor clone() const { return detach(); }

    bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

    TensorImpl& impl();
    const TensorImpl& impl() const;

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor make_result(std::string kind, Shape shape, std::vector<double> values,
                              std::vector<Tensor> inputs, BackwardFn backward);
};

/**
 * Builds the output of an operation. The node is recorded (and the output
 * requires grad) only when grad mode is on and some input requires grad.
 */
Tensor make_result(std::string kind, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, BackwardFn backward);

// Adds `g` into the gradient buffer of `t` when t requires grad.
void accumulate_grad(Tensor& t, std::span<const double> g);

bool grad_enabled() noexcept;

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard
{
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

struct TapeRecord
{
    std::string kind;
    std::vector<const TensorImpl*> inputs;
    const TensorImpl* output = nullptr;
};

// Topologically ordered view of the graph that produced `root`: every input
// of record i is a leaf or the output of a record with a smaller index.
struct GraphTape
{
    std::vector<TapeRecord> records;
};

GraphTape record_tape(const Tensor& root);

/**
 * Reverse pass from a scalar loss. Gradients are accumulated (+=) into every
 * reachable leaf that requires grad; intermediate gradients are released and
 * the graph below `loss` is consumed.
 */
void backward(const Tensor& loss);

}  // namespace hycaps
