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
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hycaps/data_pipeline.hpp"
#include "hycaps/image.hpp"

namespace hycaps {

/**
 * Procedural image tasks with pose variation.
 *
 * `shapes` has nine plain geometric figures and serves as the surrogate
 * pretraining task. `waste` has nine composite objects, one per waste
 * category, and is the target task.
 */
enum class SyntheticTask
{
    shapes,
    waste,
};

std::string to_string(SyntheticTask task);
SyntheticTask parse_synthetic_task(const std::string& text);
const std::vector<std::string>& synthetic_class_names(SyntheticTask task);

struct SyntheticSpec
{
    SyntheticTask task = SyntheticTask::waste;
    std::size_t image_size = 64;
    double min_scale = 0.45;  // object half-extent as a fraction of the half canvas
    double max_scale = 0.85;
    double max_shift = 0.2;   // centre offset, same units
    double max_rotation_deg = 180.0;
    double noise_std = 14.0;  // per-channel Gaussian noise, 8-bit units
    std::size_t max_distractors = 3;
};

// Deterministic in (spec, label, seed).
Image render_synthetic(const SyntheticSpec& spec, std::size_t label, std::uint64_t seed);

/**
 * `per_class` images of every class, class-major. Sample i of class c is
 * rendered from Rng::derive(seed, c * 1'000'003 + i); source ids read
 * "<class>/<class>_<i>" with i zero-padded to four digits.
 */
std::vector<Sample> generate_samples(const SyntheticSpec& spec, std::size_t per_class, std::uint64_t seed);

// Writes <root>/<class>/<class>_<i>.png for every generated sample.
void write_synthetic_tree(const std::filesystem::path& root, const SyntheticSpec& spec, std::size_t per_class,
                          std::uint64_t seed);

}  // namespace hycaps
