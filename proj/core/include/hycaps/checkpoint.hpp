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

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hycaps/layers.hpp"

namespace hycaps {

class CheckpointError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor
{
    std::string name;  // "<layer>.<param>"
    Shape shape;
    std::vector<double> values;

    bool operator==(const NamedTensor&) const = default;
};

/**
 * Self-describing container: string metadata plus an ordered list of named
 * tensors. The binary layout is
 *
 *   "HYCKPT01" | u32 meta_count | (u32 len, key, u32 len, value)*
 *              | u32 tensor_count | (u32 len, name, u32 rank, u64 dims[rank],
 *                                    f64 values[prod(dims)])*
 *
 * all little-endian, so values round-trip bit-exactly.
 */
struct Checkpoint
{
    std::map<std::string, std::string> metadata;
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const;
    bool operator==(const Checkpoint&) const = default;
};

std::vector<char> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every parameter of `graph` (optionally only layers under `prefix`).
Checkpoint snapshot(const ModelGraph& graph, const std::string& prefix = {});

// Writes the checkpoint values into matching parameters. Every parameter
// under `prefix` must be present with an identical shape, otherwise a
// CheckpointError describes the architecture mismatch. With `strict`, extra
// checkpoint tensors under `prefix` are also an error.
void restore(ModelGraph& graph, const Checkpoint& ckpt, const std::string& prefix = {},
             bool strict = true);

}  // namespace hycaps
