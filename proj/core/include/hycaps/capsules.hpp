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
#include <string>
#include <vector>

#include "hycaps/layers.hpp"
#include "hycaps/tensor.hpp"

namespace hycaps {

struct PrimaryCapsuleSpec
{
    std::size_t kernel_size = 3;  // one of {2, 3, 5}
    std::size_t stride = 2;       // one of {1, 2}
    std::size_t num_capsule_channels = 8;
    std::size_t capsule_dim = 8;

    void validate() const;
};

struct ClassCapsuleSpec
{
    std::size_t num_classes = 9;
    std::size_t out_dim = 16;
    std::size_t routing_iters = 3;

    void validate() const;
};

struct MarginLossSpec
{
    double m_plus = 0.9;
    double m_minus = 0.1;
    double lambda = 0.5;
};

// Couplings recorded at every routing iteration, [N, I, J] each.
struct RoutingTrace
{
    std::vector<Tensor> logits;
    std::vector<Tensor> couplings;
};

/**
 * v * |v| / (1 + |v|^2) over the last axis: same direction, norm |v|^2/(1+|v|^2)
 * in [0, 1). Exactly zero on the zero vector.
 */
Tensor squash(const Tensor& v);

// Euclidean norm over the last axis, [..., D] -> [...]. Gradient at 0 is 0.
Tensor capsule_lengths(const Tensor& v);

// Prediction vectors u_hat[n,i,j] = W[i,j] u[n,i]:
// u [N,I,din], W [I,J,dout,din] -> [N,I,J,dout].
Tensor capsule_transform(const Tensor& u, const Tensor& W);

// s[n,j] = sum_i c[n,i,j] u_hat[n,i,j]: c [N,I,J], u_hat [N,I,J,D] -> [N,J,D].
Tensor routing_combine(const Tensor& c, const Tensor& u_hat);

// a[n,i,j] = <u_hat[n,i,j], v[n,j]>: [N,I,J,D] x [N,J,D] -> [N,I,J].
Tensor routing_agreement(const Tensor& u_hat, const Tensor& v);

/**
 * Routing-by-agreement between primary capsules [N,I,din] and class capsules.
 * Logits start at zero on every call; couplings are softmax over classes; the
 * logit update is skipped after the final iteration. Gradients flow through
 * the unrolled loop. Returns [N, num_classes, out_dim].
 */
Tensor route(const Tensor& primary, const ClassCapsuleSpec& spec, const Tensor& W,
             RoutingTrace* trace = nullptr);

// Primary capsules from a feature map [N,C,H,W] -> [N, channels*H'*W', dim].
Tensor primary_capsules(const Tensor& features, const PrimaryCapsuleSpec& spec,
                        const Tensor& weights, const Tensor& bias);

// sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2,
// summed over classes and averaged over the batch.
Tensor margin_loss(const Tensor& v, const Tensor& targets, const MarginLossSpec& spec = {});

// argmax_j |v[n,j]| with ties to the lowest index.
std::vector<std::size_t> capsule_predict(const Tensor& v);

class PrimaryCapsules
{
public:
    PrimaryCapsules(std::size_t in_channels, PrimaryCapsuleSpec spec, Rng& rng);

    Tensor forward(const Tensor& features) const;
    void register_params(ModelGraph& graph, const std::string& name) const;
    const PrimaryCapsuleSpec& spec() const { return spec_; }
    // Capsule count for a square feature map of side `size`.
    std::size_t capsule_count(std::size_t size) const;

private:
    PrimaryCapsuleSpec spec_;
    Tensor weight_;
    Tensor bias_;
};

class ClassCapsules
{
public:
    ClassCapsules(std::size_t num_inputs, std::size_t in_dim, ClassCapsuleSpec spec, Rng& rng);

    Tensor forward(const Tensor& primary, RoutingTrace* trace = nullptr) const;
    void register_params(ModelGraph& graph, const std::string& name) const;
    const ClassCapsuleSpec& spec() const { return spec_; }
    const Tensor& weight() const { return weight_; }

private:
    ClassCapsuleSpec spec_;
    Tensor weight_;  // [I, J, out_dim, in_dim]
};

}  // namespace hycaps
