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

#include <span>
#include <string_view>
#include <vector>

#include "hycaps/tensor.hpp"

namespace hycaps {

enum class OpKind
{
    add,
    sub,
    mul,
    div,
    matmul,
    neg,
    relu,
    exp,
    log,
    sqrt,
    square,
    sum,
    mean,
};

std::string_view to_string(OpKind kind);

// Generic dispatch over the kinds above; arity is checked.
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs);

// Elementwise binary ops. Shapes must match, or one operand's shape (leading
// 1s stripped) must be a suffix of the other's, in which case it is repeated.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

// Reductions to shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Sums out `axis`, dropping it (rank-1 inputs reduce to [1]).
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten(const Tensor& x);  // [N, ...] -> [N, prod(...)]
Tensor permute(const Tensor& x, std::span<const std::size_t> order);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// Mean over the batch of -sum_k target_k * log softmax(logits)_k.
Tensor cross_entropy(const Tensor& logits, const Tensor& one_hot);

// Rows `indices` of x along axis 0, not differentiable.
Tensor take_rows(const Tensor& x, std::span<const std::size_t> indices);

}  // namespace hycaps
