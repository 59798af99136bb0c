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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "hycaps/data_pipeline.hpp"
#include "hycaps/image.hpp"
#include "hycaps/rng.hpp"
#include "test_support.hpp"

using namespace hycaps;
using hycaps::testing::TempDir;

namespace {

Image solid(std::size_t h, std::size_t w, std::uint8_t value)
{
    Image img(h, w);
    std::fill(img.pixels.begin(), img.pixels.end(), value);
    return img;
}

// Unsplit manifest with counts[c] entries of class c.
DatasetManifest manifest_with(const std::vector<std::size_t>& counts)
{
    DatasetManifest m;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        m.classes.push_back("class" + std::to_string(c));
        for (std::size_t i = 0; i < counts[c]; ++i) {
            const auto id = m.classes[c] + "/" + std::to_string(i) + ".png";
            m.entries.push_back({id, c, Split::unassigned, id, std::nullopt, {}});
        }
    }
    return m;
}

DatasetManifest waste_manifest(std::size_t per_class)
{
    auto m = manifest_with(std::vector<std::size_t>(9, per_class));
    m.classes = waste_class_names();
    for (auto& e : m.entries) {
        e.path = m.classes[e.label] + "/" + e.path;
        e.source_id = e.path;
    }
    return m;
}

std::set<std::string> sources(const DatasetManifest& m, Split split)
{
    std::set<std::string> out;
    for (const auto& e : m.in_split(split)) {
        out.insert(e.source_id);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// pad_resize

TEST(PadResize, SquareTargetUnchanged)
{
    Rng rng(51);
    Image img(224, 224);
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(rng.below(256));
    }
    EXPECT_EQ(pad_resize(img, 224), img);
}

TEST(PadResize, WideImageGetsBlackBands)
{
    const auto out = pad_resize(solid(100, 200, 200), 224);
    ASSERT_EQ(out.height, 224u);
    ASSERT_EQ(out.width, 224u);
    const auto g = pad_resize_geometry(100, 200, 224);
    EXPECT_EQ(g.scaled_height, 112u);
    EXPECT_EQ(g.scaled_width, 224u);
    EXPECT_EQ(g.top, 56u);
    for (std::size_t y = 0; y < 224; ++y) {
        for (std::size_t x = 0; x < 224; ++x) {
            const bool band = y < 56 || y >= 168;
            for (std::size_t c = 0; c < 3; ++c) {
                if (band) {
                    ASSERT_EQ(out.at(y, x, c), 0) << y << "," << x;
                } else {
                    ASSERT_EQ(out.at(y, x, c), 200) << y << "," << x;
                }
            }
        }
    }
}

TEST(PadResize, SinglePixelIsCentredBlock)
{
    const auto out = pad_resize(solid(1, 1, 77), 8);
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
            EXPECT_EQ(out.at(y, x, 1), 77);
        }
    }
    const auto tall = pad_resize(solid(4, 1, 90), 8);
    const auto g = pad_resize_geometry(4, 1, 8);
    EXPECT_EQ(g.scaled_width, 2u);
    EXPECT_EQ(g.left, 3u);
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
            EXPECT_EQ(tall.at(y, x, 0), x == 3 || x == 4 ? 90 : 0);
        }
    }
}

TEST(PadResize, BordersBlackForRandomSizes)
{
    Rng rng(52);
    for (int t = 0; t < 100; ++t) {
        const std::size_t h = 1 + rng.below(300), w = 1 + rng.below(300);
        const auto out = pad_resize(solid(h, w, 255), 64);
        const auto g = pad_resize_geometry(h, w, 64);
        ASSERT_EQ(out.pixels.size(), 64u * 64u * 3u);
        EXPECT_EQ(std::max(g.scaled_height, g.scaled_width), 64u);
        for (std::size_t y = 0; y < 64; ++y) {
            for (std::size_t x = 0; x < 64; ++x) {
                const bool inside = y >= g.top && y < g.top + g.scaled_height && x >= g.left &&
                                    x < g.left + g.scaled_width;
                if (!inside) {
                    ASSERT_EQ(out.at(y, x, 0), 0);
                    ASSERT_EQ(out.at(y, x, 2), 0);
                }
            }
        }
    }
}

TEST(PadResize, EmptyImageRejected)
{
    EXPECT_THROW(pad_resize(Image{}, 224), ImageError);
}

TEST(ImageTransforms, RotationFillsBlackAndIdentityIsExact)
{
    const auto img = solid(21, 21, 180);
    EXPECT_EQ(rotate(img, 0.0), img);
    const auto r = rotate(img, 45.0);
    EXPECT_EQ(r.at(0, 0, 0), 0);
    EXPECT_EQ(r.at(10, 10, 0), 180);
    const auto z = rescale(img, 0.5);
    EXPECT_EQ(z.at(0, 0, 1), 0);
    EXPECT_EQ(z.at(10, 10, 1), 180);
}

TEST(ImageIo, PngRoundTrip)
{
    TempDir dir("image_io");
    Rng rng(53);
    Image img(7, 5);
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(rng.below(256));
    }
    save_image(dir.path() / "x.png", img);
    EXPECT_EQ(load_image(dir.path() / "x.png"), img);
    EXPECT_THROW(load_image(dir.path() / "missing.png"), ImageError);
}

// ---------------------------------------------------------------------------
// splitting

TEST(SplitCounts, Examples)
{
    EXPECT_EQ(split_counts(100, {}), (std::array<std::size_t, 3>{70, 15, 15}));
    const auto ten = split_counts(10, {});
    EXPECT_EQ(ten[0], 7u);
    EXPECT_EQ(ten[0] + ten[1] + ten[2], 10u);
    EXPECT_EQ(ten, (std::array<std::size_t, 3>{7, 2, 1}));
}

TEST(SplitCounts, WithinOneOfExactShares)
{
    for (std::size_t n = 3; n < 400; ++n) {
        const auto c = split_counts(n, {});
        EXPECT_EQ(c[0] + c[1] + c[2], n);
        EXPECT_LE(std::abs(static_cast<double>(c[0]) - 0.70 * n), 1.0);
        EXPECT_LE(std::abs(static_cast<double>(c[1]) - 0.15 * n), 1.0);
        EXPECT_LE(std::abs(static_cast<double>(c[2]) - 0.15 * n), 1.0);
    }
}

TEST(StratifiedSplit, PartitionWithProportions)
{
    Rng rng(54);
    for (int t = 0; t < 30; ++t) {
        std::vector<std::size_t> counts(2 + rng.below(8));
        for (auto& c : counts) {
            c = 3 + rng.below(80);
        }
        const auto m = stratified_split(manifest_with(counts), {}, rng.next_u64());
        ASSERT_EQ(m.entries.size(), std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
        std::set<std::string> seen;
        for (const auto& e : m.entries) {
            ASSERT_NE(e.split, Split::unassigned);
            ASSERT_TRUE(seen.insert(e.source_id).second);
        }
        for (std::size_t c = 0; c < counts.size(); ++c) {
            const double n = static_cast<double>(counts[c]);
            EXPECT_LE(std::abs(m.count(c, Split::train) - 0.70 * n), 1.0);
            EXPECT_LE(std::abs(m.count(c, Split::val) - 0.15 * n), 1.0);
            EXPECT_LE(std::abs(m.count(c, Split::test) - 0.15 * n), 1.0);
        }
    }
}

TEST(StratifiedSplit, DeterministicInSeed)
{
    const auto base = manifest_with({30, 40, 50});
    EXPECT_EQ(stratified_split(base, {}, 7), stratified_split(base, {}, 7));
    EXPECT_NE(stratified_split(base, {}, 7), stratified_split(base, {}, 8));
    const auto m = stratified_split(base, {}, 7);
    const auto train = sources(m, Split::train), val = sources(m, Split::val), test = sources(m, Split::test);
    std::set<std::string> all(train);
    all.insert(val.begin(), val.end());
    all.insert(test.begin(), test.end());
    EXPECT_EQ(all.size(), train.size() + val.size() + test.size());
    EXPECT_EQ(all.size(), base.entries.size());
}

TEST(StratifiedSplit, TooFewSamplesRejected)
{
    EXPECT_THROW(stratified_split(manifest_with({10, 2}), {}, 1), DataError);
}

// ---------------------------------------------------------------------------
// augmentation

TEST(Augment, GlovesDoubleMaskTriple)
{
    const auto split = stratified_split(waste_manifest(40), {}, 3);
    const auto aug = augment(split, AugmentationPlan::class_balancing(3));
    const auto gloves = split.class_index("gloves"), mask = split.class_index("mask");
    EXPECT_EQ(aug.count(gloves, Split::train), 2 * split.count(gloves, Split::train));
    EXPECT_EQ(aug.count(mask, Split::train), 3 * split.count(mask, Split::train));
    for (std::size_t c = 0; c < 9; ++c) {
        if (c != gloves && c != mask) {
            EXPECT_EQ(aug.count(c, Split::train), split.count(c, Split::train));
        }
        EXPECT_EQ(aug.count(c, Split::val), split.count(c, Split::val));
        EXPECT_EQ(aug.count(c, Split::test), split.count(c, Split::test));
    }
}

TEST(Augment, CopiesPointAtTrainOriginalsOfSameClass)
{
    const auto split = stratified_split(waste_manifest(20), {}, 4);
    const auto aug = augment(split, AugmentationPlan::class_balancing(4));
    std::map<std::string, ManifestEntry> originals;
    for (const auto& e : split.entries) {
        originals.emplace(e.source_id, e);
    }
    std::size_t copies = 0;
    for (const auto& e : aug.entries) {
        if (!e.augmented_from) {
            continue;
        }
        ++copies;
        const auto& src = originals.at(*e.augmented_from);
        EXPECT_EQ(src.split, Split::train);
        EXPECT_EQ(src.label, e.label);
        EXPECT_EQ(e.split, Split::train);
        EXPECT_NE(e.transform.kind, Transform::Kind::none);
        if (e.transform.kind == Transform::Kind::rotation) {
            EXPECT_LE(std::abs(e.transform.amount), 25.0);
        } else {
            EXPECT_GE(e.transform.amount, 0.8);
            EXPECT_LE(e.transform.amount, 1.2);
        }
    }
    EXPECT_EQ(copies, split.count(split.class_index("gloves"), Split::train) +
                          2 * split.count(split.class_index("mask"), Split::train));
}

TEST(Augment, EmptyPlanLeavesManifestUnchanged)
{
    const auto split = stratified_split(waste_manifest(10), {}, 5);
    AugmentationPlan plan;
    EXPECT_EQ(augment(split, plan), split);
    plan.per_class_extra = {{"gloves", 0}, {"mask", 0}};
    EXPECT_EQ(augment(split, plan), split);
}

TEST(Augment, DeterministicAndRejectsUnknownClass)
{
    const auto split = stratified_split(waste_manifest(10), {}, 6);
    EXPECT_EQ(augment(split, AugmentationPlan::class_balancing(9)), augment(split, AugmentationPlan::class_balancing(9)));
    AugmentationPlan plan;
    plan.per_class_extra = {{"batteries", 1}};
    EXPECT_THROW(augment(split, plan), DataError);
}

TEST(Augment, InMemoryCopiesArePadResized)
{
    std::vector<Sample> train;
    for (std::size_t i = 0; i < 4; ++i) {
        train.push_back({solid(10, 20, 120), i % 2 == 0 ? 1u : 2u, "s" + std::to_string(i), std::nullopt});
    }
    const auto out = augment(train, waste_class_names(), AugmentationPlan::class_balancing(1), 16);
    // Two gloves (+1 each) and two masks (+2 each).
    ASSERT_EQ(out.size(), 4u + 2u + 4u);
    for (std::size_t i = 4; i < out.size(); ++i) {
        EXPECT_EQ(out[i].image.height, 16u);
        EXPECT_TRUE(out[i].augmented_from.has_value());
    }
}

// ---------------------------------------------------------------------------
// encoding and batching

TEST(NormalizeEncode, EndpointsAndOneHot)
{
    Image img(1, 2);
    img.pixels = {255, 0, 255, 0, 255, 0};
    const std::vector<Sample> samples = {{img, 3, "a", std::nullopt}};
    const auto enc = normalize_encode(samples, 9);
    EXPECT_EQ(enc.images.shape(), (Shape{1, 3, 1, 2}));
    EXPECT_EQ(enc.images[0], 1.0);
    EXPECT_EQ(enc.images[1], 0.0);
    EXPECT_EQ(enc.images[2], 0.0);
    EXPECT_EQ(enc.images[3], 1.0);
    const std::vector<double> want = {0, 0, 0, 1, 0, 0, 0, 0, 0};
    EXPECT_EQ(std::vector<double>(enc.targets.values().begin(), enc.targets.values().end()), want);
}

TEST(NormalizeEncode, RangeAndRowSums)
{
    Rng rng(55);
    std::vector<Sample> samples;
    for (int i = 0; i < 20; ++i) {
        Image img(3, 4);
        for (auto& p : img.pixels) {
            p = static_cast<std::uint8_t>(rng.below(256));
        }
        samples.push_back({img, rng.below(5), "", std::nullopt});
    }
    const auto enc = normalize_encode(samples, 5);
    for (double v : enc.images.values()) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
    }
    for (std::size_t n = 0; n < 20; ++n) {
        double s = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
            s += enc.targets[n * 5 + k];
        }
        EXPECT_EQ(s, 1.0);
    }
    std::vector<Sample> bad = {{Image(1, 1), 5, "", std::nullopt}};
    EXPECT_THROW(normalize_encode(bad, 5), DataError);
}

TEST(BatchIndices, PartitionAndOrder)
{
    const auto b = batch_indices(10, 3, false, 0, 0);
    ASSERT_EQ(b.size(), 4u);
    EXPECT_EQ(b[0], (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(b[3], (std::vector<std::size_t>{9}));
    const auto e0 = batch_indices(50, 7, true, 11, 0);
    EXPECT_EQ(e0, batch_indices(50, 7, true, 11, 0));
    EXPECT_NE(e0, batch_indices(50, 7, true, 11, 1));
    std::vector<std::size_t> all;
    for (const auto& batch : e0) {
        all.insert(all.end(), batch.begin(), batch.end());
    }
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 50; ++i) {
        EXPECT_EQ(all[i], i);
    }
}

TEST(BatchIter, GathersRows)
{
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < 5; ++i) {
        samples.push_back({solid(2, 2, static_cast<std::uint8_t>(i * 50)), i % 3, "", std::nullopt});
    }
    const auto enc = normalize_encode(samples, 3);
    const auto batches = batch_iter(enc, 2, true, 3, 0);
    const auto order = batch_indices(5, 2, true, 3, 0);
    ASSERT_EQ(batches.size(), order.size());
    for (std::size_t b = 0; b < batches.size(); ++b) {
        for (std::size_t r = 0; r < order[b].size(); ++r) {
            EXPECT_EQ(batches[b].labels[r], order[b][r] % 3);
            EXPECT_DOUBLE_EQ(batches[b].images[r * 12], order[b][r] * 50 / 255.0);
        }
    }
}

// ---------------------------------------------------------------------------
// manifests and reports

TEST(DistributionReport, EmptyAndAugmented)
{
    DatasetManifest empty;
    empty.classes = waste_class_names();
    const auto r0 = class_distribution_report(empty);
    EXPECT_EQ(r0.total_before(), 0u);
    EXPECT_EQ(r0.total_after(), 0u);
    const auto split = stratified_split(waste_manifest(30), {}, 8);
    const auto r = class_distribution_report(augment(split, AugmentationPlan::class_balancing(8)));
    const auto gloves = split.class_index("gloves");
    EXPECT_EQ(r.after[gloves][0], 2 * r.before[gloves][0]);
    EXPECT_EQ(r.after[gloves][1], r.before[gloves][1]);
    EXPECT_EQ(r.total_before(), 270u);
    EXPECT_NE(r.to_text().find("gloves\ttrain\t21\t42"), std::string::npos);
}

TEST(Manifest, TextRoundTrip)
{
    auto m = augment(stratified_split(waste_manifest(6), {}, 9), AugmentationPlan::class_balancing(9));
    m.root = "/data/waste";
    const auto back = parse_manifest(format_manifest(m));
    EXPECT_EQ(back, m);
    EXPECT_THROW(parse_manifest("#classes\ta,b\nx.png\tc\n"), DataError);
}

TEST(Manifest, ScanDirectory)
{
    TempDir dir("scan");
    for (const char* cls : {"b", "a"}) {
        std::filesystem::create_directories(dir.path() / cls);
        for (int i = 0; i < 2; ++i) {
            save_image(dir.path() / cls / ("img" + std::to_string(i) + ".png"), solid(3, 3, 10));
        }
    }
    hycaps::testing::write_file(dir.path() / "a" / "notes.txt", "skip");
    const auto m = scan_directory(dir.path());
    EXPECT_EQ(m.classes, (std::vector<std::string>{"a", "b"}));
    ASSERT_EQ(m.entries.size(), 4u);
    EXPECT_EQ(m.entries[0].path, "a/img0.png");
    EXPECT_EQ(m.entries[3].label, 1u);
    std::filesystem::create_directories(dir.path() / "c");
    try {
        scan_directory(dir.path());
        FAIL() << "empty class accepted";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("'c'"), std::string::npos);
    }
}

TEST(Manifest, RenderEntryAppliesTransformAndLetterbox)
{
    TempDir dir("render");
    std::filesystem::create_directories(dir.path() / "k");
    save_image(dir.path() / "k" / "x.png", solid(10, 20, 200));
    ManifestEntry e{"k/x.png", 0, Split::train, "k/x.png", std::nullopt, {}};
    const auto plain = render_entry(e, dir.path(), 20);
    EXPECT_EQ(plain, pad_resize(solid(10, 20, 200), 20));
    e.transform = {Transform::Kind::rotation, 20.0};
    EXPECT_EQ(render_entry(e, dir.path(), 20), pad_resize(rotate(solid(10, 20, 200), 20.0), 20));
}
