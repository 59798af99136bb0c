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

#include "hycaps/data_pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hycaps/ops.hpp"
#include "hycaps/rng.hpp"

namespace fs = std::filesystem;

namespace hycaps {

namespace {

std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool is_image_file(const fs::path& p)
{
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::string> split_on(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        out.push_back(cur);
    }
    if (!s.empty() && s.back() == sep) {
        out.emplace_back();
    }
    return out;
}

std::string format_transform(const Transform& t)
{
    switch (t.kind) {
    case Transform::Kind::rotation: return fmt::format("rotation:{:.17g}", t.amount);
    case Transform::Kind::scaling: return fmt::format("scaling:{:.17g}", t.amount);
    case Transform::Kind::none: break;
    }
    return "none";
}

Transform parse_transform(const std::string& text)
{
    if (text.empty() || text == "none") {
        return {};
    }
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        throw DataError("malformed transform '" + text + "'");
    }
    const auto kind = text.substr(0, colon);
    const double amount = std::stod(text.substr(colon + 1));
    if (kind == "rotation") {
        return {Transform::Kind::rotation, amount};
    }
    if (kind == "scaling") {
        return {Transform::Kind::scaling, amount};
    }
    throw DataError("unknown transform kind '" + kind + "'");
}

std::size_t split_slot(Split s)
{
    switch (s) {
    case Split::train: return 0;
    case Split::val: return 1;
    case Split::test: return 2;
    case Split::unassigned: break;
    }
    return 3;
}

Transform draw_transform(const AugmentationPlan& plan, const std::string& source_id, std::size_t copy)
{
    auto rng = Rng::derive(plan.rng_seed, fnv1a(source_id) + copy);
    if (rng.bernoulli(0.5)) {
        return {Transform::Kind::rotation, rng.uniform(-plan.max_rotation_deg, plan.max_rotation_deg)};
    }
    return {Transform::Kind::scaling, rng.uniform(plan.min_scale, plan.max_scale)};
}

}  // namespace

const std::vector<std::string>& waste_class_names()
{
    static const std::vector<std::string> names = {"syringe", "gloves", "mask",  "medicines", "plastic",
                                                   "paper",   "metal",  "glass", "organic"};
    return names;
}

std::string to_string(Split split)
{
    switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: break;
    }
    return "unassigned";
}

Split parse_split(const std::string& text)
{
    if (text == "train") {
        return Split::train;
    }
    if (text == "val") {
        return Split::val;
    }
    if (text == "test") {
        return Split::test;
    }
    if (text.empty() || text == "unassigned") {
        return Split::unassigned;
    }
    throw DataError("unknown split '" + text + "'");
}

Image apply_transform(const Image& image, const Transform& t)
{
    switch (t.kind) {
    case Transform::Kind::rotation: return rotate(image, t.amount);
    case Transform::Kind::scaling: return rescale(image, t.amount);
    case Transform::Kind::none: break;
    }
    return image;
}

std::size_t DatasetManifest::class_index(const std::string& name) const
{
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) {
        throw DataError("unknown class '" + name + "'");
    }
    return static_cast<std::size_t>(it - classes.begin());
}

std::size_t DatasetManifest::count(std::size_t label, Split split) const
{
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const auto& e) {
        return e.label == label && e.split == split;
    }));
}

std::vector<ManifestEntry> DatasetManifest::in_split(Split split) const
{
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [&](const auto& e) { return e.split == split; });
    return out;
}

DatasetManifest scan_directory(const fs::path& root)
{
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw DataError("data root " + root.string() + " is missing or not a directory");
    }
    DatasetManifest m;
    for (const auto& dir : fs::directory_iterator(root)) {
        if (dir.is_directory()) {
            m.classes.push_back(dir.path().filename().string());
        }
    }
    std::sort(m.classes.begin(), m.classes.end());
    if (m.classes.empty()) {
        throw DataError("data root " + root.string() + " has no class directories");
    }
    for (std::size_t c = 0; c < m.classes.size(); ++c) {
        std::vector<std::string> files;
        for (const auto& f : fs::directory_iterator(root / m.classes[c])) {
            if (f.is_regular_file() && is_image_file(f.path())) {
                files.push_back(fs::relative(f.path(), root).generic_string());
            }
        }
        if (files.empty()) {
            throw DataError("class directory '" + m.classes[c] + "' contains no images");
        }
        std::sort(files.begin(), files.end());
        for (auto& f : files) {
            ManifestEntry e;
            e.source_id = f;
            e.path = std::move(f);
            e.label = c;
            m.entries.push_back(std::move(e));
        }
    }
    return m;
}

std::string format_manifest(const DatasetManifest& manifest)
{
    std::string out = "#hycaps-manifest\tv1\n#classes\t";
    for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
        out += (c ? "," : "") + manifest.classes[c];
    }
    out += "\n";
    if (!manifest.root.empty()) {
        out += "#root\t" + manifest.root + "\n";
    }
    for (const auto& e : manifest.entries) {
        out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", e.path, manifest.classes.at(e.label),
                           to_string(e.split), e.source_id, e.augmented_from.value_or("-"),
                           format_transform(e.transform));
    }
    return out;
}

DatasetManifest parse_manifest(const std::string& text)
{
    DatasetManifest m;
    std::istringstream in(text);
    std::string line;
    bool have_classes = false;
    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            auto fields = split_on(line, '\t');
            if (fields[0] == "#classes" && fields.size() >= 2) {
                m.classes = split_on(fields[1], ',');
                have_classes = true;
            } else if (fields[0] == "#root" && fields.size() >= 2) {
                m.root = fields[1];
            }
            continue;
        }
        auto fields = split_on(line, '\t');
        if (fields.size() < 2) {
            throw DataError("manifest line " + std::to_string(line_no) + " needs path and class");
        }
        rows.push_back(std::move(fields));
    }
    if (!have_classes) {
        for (const auto& r : rows) {
            if (std::find(m.classes.begin(), m.classes.end(), r[1]) == m.classes.end()) {
                m.classes.push_back(r[1]);
            }
        }
        std::sort(m.classes.begin(), m.classes.end());
    }
    for (auto& r : rows) {
        ManifestEntry e;
        e.path = r[0];
        e.label = m.class_index(r[1]);
        e.split = r.size() > 2 ? parse_split(r[2]) : Split::unassigned;
        e.source_id = r.size() > 3 && !r[3].empty() ? r[3] : r[0];
        if (r.size() > 4 && r[4] != "-" && !r[4].empty()) {
            e.augmented_from = r[4];
        }
        if (r.size() > 5) {
            e.transform = parse_transform(r[5]);
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write manifest " + path.string());
    }
    out << format_manifest(manifest);
}

DatasetManifest read_manifest(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read manifest " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str());
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& fractions)
{
    const std::array<double, 3> f = {fractions.train, fractions.val, fractions.test};
    std::array<std::uint64_t, 3> w{};
    std::uint64_t total = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        if (!(f[k] >= 0.0)) {
            throw DataError("split fractions must be non-negative");
        }
        w[k] = static_cast<std::uint64_t>(std::llround(f[k] * 1e6));
        total += w[k];
    }
    if (total == 0) {
        throw DataError("split fractions sum to zero");
    }
    std::array<std::size_t, 3> counts{};
    std::array<std::uint64_t, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        counts[k] = static_cast<std::size_t>(n * w[k] / total);
        rem[k] = n * w[k] % total;
        assigned += counts[k];
    }
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) {
        ++counts[order[i % 3]];
    }
    return counts;
}

DatasetManifest stratified_split(DatasetManifest manifest, const SplitFractions& fractions, std::uint64_t seed)
{
    for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
            if (manifest.entries[i].label == c) {
                members.push_back(i);
            }
        }
        if (members.size() < 3) {
            throw DataError("class '" + manifest.classes[c] + "' has " + std::to_string(members.size()) +
                            " samples; at least 3 are needed for a three-way split");
        }
        auto rng = Rng::derive(seed, c);
        rng.shuffle(std::span<std::size_t>(members));
        const auto counts = split_counts(members.size(), fractions);
        for (std::size_t i = 0; i < members.size(); ++i) {
            const Split s = i < counts[0] ? Split::train : i < counts[0] + counts[1] ? Split::val : Split::test;
            manifest.entries[members[i]].split = s;
        }
    }
    return manifest;
}

AugmentationPlan AugmentationPlan::class_balancing(std::uint64_t seed)
{
    AugmentationPlan plan;
    plan.per_class_extra = {{"gloves", 1}, {"mask", 2}};
    plan.rng_seed = seed;
    return plan;
}

DatasetManifest augment(const DatasetManifest& manifest, const AugmentationPlan& plan)
{
    std::vector<std::size_t> extra(manifest.classes.size(), 0);
    for (const auto& [name, copies] : plan.per_class_extra) {
        extra[manifest.class_index(name)] = copies;
    }
    DatasetManifest out = manifest;
    for (const auto& e : manifest.entries) {
        if (e.split != Split::train || e.augmented_from) {
            continue;
        }
        for (std::size_t k = 0; k < extra[e.label]; ++k) {
            ManifestEntry copy = e;
            copy.source_id = e.source_id + "#aug" + std::to_string(k + 1);
            copy.augmented_from = e.source_id;
            copy.transform = draw_transform(plan, e.source_id, k);
            out.entries.push_back(std::move(copy));
        }
    }
    return out;
}

std::vector<Sample> augment(std::vector<Sample> train, const std::vector<std::string>& classes,
                            const AugmentationPlan& plan, std::size_t target)
{
    std::vector<std::size_t> extra(classes.size(), 0);
    for (const auto& [name, copies] : plan.per_class_extra) {
        auto it = std::find(classes.begin(), classes.end(), name);
        if (it == classes.end()) {
            throw DataError("augmentation plan names unknown class '" + name + "'");
        }
        extra[static_cast<std::size_t>(it - classes.begin())] = copies;
    }
    const auto originals = train.size();
    for (std::size_t i = 0; i < originals; ++i) {
        if (train[i].augmented_from || train[i].label >= classes.size()) {
            continue;
        }
        for (std::size_t k = 0; k < extra[train[i].label]; ++k) {
            Sample s;
            s.label = train[i].label;
            s.source_id = train[i].source_id + "#aug" + std::to_string(k + 1);
            s.augmented_from = train[i].source_id;
            s.image = pad_resize(apply_transform(train[i].image, draw_transform(plan, train[i].source_id, k)), target);
            train.push_back(std::move(s));
        }
    }
    return train;
}

Image render_entry(const ManifestEntry& entry, const fs::path& root, std::size_t target)
{
    return pad_resize(apply_transform(load_image(root / entry.path), entry.transform), target);
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes)
{
    std::vector<double> y(labels.size() * num_classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw DataError("label " + std::to_string(labels[i]) + " out of range for " +
                            std::to_string(num_classes) + " classes");
        }
        y[i * num_classes + labels[i]] = 1.0;
    }
    return Tensor({labels.size(), num_classes}, std::move(y));
}

EncodedSet normalize_encode(std::span<const Sample> samples, std::size_t num_classes)
{
    if (samples.empty()) {
        throw DataError("normalize_encode: no samples");
    }
    const auto h = samples[0].image.height;
    const auto w = samples[0].image.width;
    const auto plane = h * w;
    std::vector<double> x(samples.size() * 3 * plane);
    EncodedSet out;
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const auto& img = samples[n].image;
        if (img.height != h || img.width != w) {
            throw DataError("normalize_encode: sample " + samples[n].source_id +
                            " was not resized to the common size");
        }
        for (std::size_t p = 0; p < plane; ++p) {
            for (std::size_t c = 0; c < 3; ++c) {
                x[(n * 3 + c) * plane + p] = img.pixels[p * 3 + c] / 255.0;
            }
        }
        out.labels.push_back(samples[n].label);
    }
    out.images = Tensor({samples.size(), 3, h, w}, std::move(x));
    out.targets = one_hot(out.labels, num_classes);
    return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, bool shuffle,
                                                    std::uint64_t seed, std::size_t epoch)
{
    if (batch_size < 1) {
        throw DataError("batch size must be >= 1");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        auto rng = Rng::derive(seed, epoch);
        rng.shuffle(std::span<std::size_t>(order));
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    }
    return batches;
}

std::vector<Batch> batch_iter(const EncodedSet& data, std::size_t batch_size, bool shuffle, std::uint64_t seed,
                              std::size_t epoch)
{
    std::vector<Batch> out;
    for (const auto& idx : batch_indices(data.labels.size(), batch_size, shuffle, seed, epoch)) {
        Batch b;
        b.images = take_rows(data.images, idx);
        b.targets = take_rows(data.targets, idx);
        for (auto i : idx) {
            b.labels.push_back(data.labels[i]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::size_t DistributionReport::total_before() const
{
    std::size_t n = 0;
    for (const auto& row : before) {
        n += row[0] + row[1] + row[2];
    }
    return n;
}

std::size_t DistributionReport::total_after() const
{
    std::size_t n = 0;
    for (const auto& row : after) {
        n += row[0] + row[1] + row[2];
    }
    return n;
}

std::string DistributionReport::to_text() const
{
    std::string out = "class\tsplit\tbefore\tafter\n";
    static const char* splits[] = {"train", "val", "test"};
    for (std::size_t c = 0; c < classes.size(); ++c) {
        for (std::size_t s = 0; s < 3; ++s) {
            out += fmt::format("{}\t{}\t{}\t{}\n", classes[c], splits[s], before[c][s], after[c][s]);
        }
    }
    return out;
}

DistributionReport class_distribution_report(const DatasetManifest& manifest)
{
    DistributionReport r;
    r.classes = manifest.classes;
    r.before.assign(manifest.classes.size(), {0, 0, 0});
    r.after.assign(manifest.classes.size(), {0, 0, 0});
    for (const auto& e : manifest.entries) {
        const auto slot = split_slot(e.split);
        if (slot > 2 || e.label >= manifest.classes.size()) {
            continue;
        }
        ++r.after[e.label][slot];
        if (!e.augmented_from) {
            ++r.before[e.label][slot];
        }
    }
    return r;
}

}  // namespace hycaps
