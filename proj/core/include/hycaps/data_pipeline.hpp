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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hycaps/image.hpp"
#include "hycaps/tensor.hpp"

namespace hycaps {

class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// The nine waste categories in their canonical order.
const std::vector<std::string>& waste_class_names();

enum class Split
{
    unassigned,
    train,
    val,
    test,
};

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct Transform
{
    enum class Kind
    {
        none,
        rotation,  // amount in degrees
        scaling,   // amount is the zoom factor
    };
    Kind kind = Kind::none;
    double amount = 0.0;

    bool operator==(const Transform&) const = default;
};

Image apply_transform(const Image& image, const Transform& t);

struct ManifestEntry
{
    std::string path;  // relative to the data root
    std::size_t label = 0;
    Split split = Split::unassigned;
    std::string source_id;
    std::optional<std::string> augmented_from;
    Transform transform;

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest
{
    std::vector<std::string> classes;
    std::vector<ManifestEntry> entries;
    std::string root;  // directory the entry paths are relative to, may be empty

    std::size_t class_index(const std::string& name) const;  // throws DataError
    std::size_t count(std::size_t label, Split split) const;
    std::vector<ManifestEntry> in_split(Split split) const;
    bool operator==(const DatasetManifest&) const = default;
};

/**
 * Scans <root>/<class>/<file> for png, jpg and jpeg images. Classes are ordered alphabetically
 * and files lexicographically. An empty class directory is an error naming
 * that class.
 */
DatasetManifest scan_directory(const std::filesystem::path& root);

/**
 * Text manifest. Header lines start with '#'; "#classes<TAB>a,b,c" fixes the
 * class order. Each row is
 *   path<TAB>class[<TAB>split<TAB>source_id<TAB>augmented_from<TAB>transform]
 * where transform is "none", "rotation:<deg>" or "scaling:<factor>".
 */
std::string format_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(const std::string& text);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct SplitFractions
{
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
};

// Largest-remainder apportionment of n samples; ties go to the earlier split
// (train, then val, then test).
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& fractions);

/**
 * Per-class seeded shuffle followed by largest-remainder apportionment, so
 * per-class proportions are kept within one sample. Every class needs at
 * least three samples.
 */
DatasetManifest stratified_split(DatasetManifest manifest, const SplitFractions& fractions,
                                 std::uint64_t seed);

struct AugmentationPlan
{
    std::map<std::string, std::size_t> per_class_extra;
    double max_rotation_deg = 25.0;
    double min_scale = 0.8;
    double max_scale = 1.2;
    std::uint64_t rng_seed = 0;

    // gloves +1 copy, mask +2 copies per training original.
    static AugmentationPlan class_balancing(std::uint64_t seed);
};

// Appends per_class_extra[c] transformed copies of every training original of
// class c. Validation and test entries are never touched.
DatasetManifest augment(const DatasetManifest& manifest, const AugmentationPlan& plan);

struct Sample
{
    Image image;
    std::size_t label = 0;
    std::string source_id;
    std::optional<std::string> augmented_from;
};

// In-memory variant: copies are appended after the originals and already
// pad-resized to `target`.
std::vector<Sample> augment(std::vector<Sample> train, const std::vector<std::string>& classes,
                            const AugmentationPlan& plan, std::size_t target);

// Loads an entry's source image, applies its transform and pad-resizes it.
Image render_entry(const ManifestEntry& entry, const std::filesystem::path& root, std::size_t target);

struct EncodedSet
{
    Tensor images;   // [N,3,H,W], values in [0,1]
    Tensor targets;  // [N,K] one-hot
    std::vector<std::size_t> labels;
};

// Pixels / 255 in NCHW plus one-hot targets in class-index order.
EncodedSet normalize_encode(std::span<const Sample> samples, std::size_t num_classes);
Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

/**
 * Index batches for one epoch. The order is a pure function of (seed, epoch):
 * identity when shuffle is off, and the final partial batch is kept.
 */
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    bool shuffle, std::uint64_t seed,
                                                    std::size_t epoch);

struct Batch
{
    Tensor images;
    Tensor targets;
    std::vector<std::size_t> labels;
};

// Materialised batches over an encoded set (batch_indices + gather).
std::vector<Batch> batch_iter(const EncodedSet& data, std::size_t batch_size, bool shuffle,
                              std::uint64_t seed, std::size_t epoch);

struct DistributionReport
{
    std::vector<std::string> classes;
    // [class][split] for split in {train, val, test}
    std::vector<std::array<std::size_t, 3>> before;
    std::vector<std::array<std::size_t, 3>> after;

    std::size_t total_before() const;
    std::size_t total_after() const;
    // "class<TAB>split<TAB>before<TAB>after" rows under a header line.
    std::string to_text() const;
};

DistributionReport class_distribution_report(const DatasetManifest& manifest);

}  // namespace hycaps
