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


#include <benchmark/benchmark.h>

#include "hycaps/capsules.hpp"
#include "hycaps/experiments.hpp"
#include "hycaps/layers.hpp"
#include "hycaps/ops.hpp"
#include "hycaps/synthetic.hpp"

using namespace hycaps;

namespace {

Tensor uniform(Shape shape, Rng& rng, bool requires_grad = false)
{
    std::vector<double> v(num_elements(shape));
    for (auto& x : v) {
        x = rng.uniform(-1.0, 1.0);
    }
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Batch 8, 16 -> 32 channels, 3x3, args: spatial side.
void BM_Conv2dForward(benchmark::State& state)
{
    const auto side = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const auto x = uniform({8, 16, side, side}, rng);
    const auto w = uniform({32, 16, 3, 3}, rng);
    const auto b = uniform({32}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state)
{
    const auto side = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const auto x = uniform({8, 16, side, side}, rng, true);
    const auto w = uniform({32, 16, 3, 3}, rng, true);
    const auto b = uniform({32}, rng, true);
    for (auto _ : state) {
        backward(sum(conv2d(x, w, b, 1, 1)));
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

// Batch 16, 9 class capsules of dim 16, args: primary capsule count, iterations.
void BM_Routing(benchmark::State& state)
{
    const auto count = static_cast<std::size_t>(state.range(0));
    const ClassCapsuleSpec spec{9, 16, static_cast<std::size_t>(state.range(1))};
    Rng rng(3);
    const auto u = uniform({16, count, 8}, rng);
    const auto W = uniform({count, 9, 16, 8}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        benchmark::DoNotOptimize(route(u, spec, W));
    }
}
BENCHMARK(BM_Routing)->Args({72, 3})->Args({288, 3})->Args({288, 1})->Args({1152, 3})->Unit(benchmark::kMillisecond);

void BM_RoutingBackward(benchmark::State& state)
{
    const auto count = static_cast<std::size_t>(state.range(0));
    const ClassCapsuleSpec spec{9, 16, 3};
    Rng rng(4);
    const auto u = uniform({16, count, 8}, rng, true);
    const auto W = uniform({count, 9, 16, 8}, rng, true);
    for (auto _ : state) {
        backward(sum(capsule_lengths(route(u, spec, W))));
    }
}
BENCHMARK(BM_RoutingBackward)->Arg(72)->Arg(288)->Unit(benchmark::kMillisecond);

void BM_DenseBlockForward(benchmark::State& state)
{
    Rng rng(5);
    DenseBlock block(16, {4, 12, state.range(0) != 0}, rng);
    const auto x = uniform({8, 16, 16, 16}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        benchmark::DoNotOptimize(block.forward(x));
    }
}
BENCHMARK(BM_DenseBlockForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// One training epoch over 50 images at 64x64, args: experiment kind index.
void BM_TrainEpoch(benchmark::State& state)
{
    static const ExperimentKind kinds[] = {ExperimentKind::baseline, ExperimentKind::frozen_hybrid,
                                           ExperimentKind::unfrozen_hybrid};
    SyntheticSpec spec;
    auto samples = generate_samples(spec, 6, 9);
    samples.resize(50);
    const auto data = normalize_encode(samples, 9);
    ExperimentConfig c;
    c.experiment = kinds[state.range(0)];
    c.extractor = "small";
    c.input_size = 64;
    c.grid_domains = false;
    c.max_epochs = 1;
    c.unfrozen_layers = c.experiment == ExperimentKind::frozen_hybrid ? 0 : 10;
    for (auto _ : state) {
        auto model = build_model(c);
        benchmark::DoNotOptimize(train(*model, data, data));
    }
    state.SetLabel(to_string(c.experiment));
}
BENCHMARK(BM_TrainEpoch)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
