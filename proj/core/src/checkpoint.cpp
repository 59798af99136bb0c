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

#include "hycaps/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace hycaps {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialisation assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'Y', 'C', 'K', 'P', 'T', '0', '1'};

class Writer
{
public:
    template <typename T>
    void pod(T v)
    {
        const auto* p = reinterpret_cast<const char*>(&v);
        out_.insert(out_.end(), p, p + sizeof(T));
    }

    void str(const std::string& s)
    {
        pod(static_cast<std::uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }

    void raw(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const char*>(data);
        out_.insert(out_.end(), p, p + n);
    }

    std::vector<char> take() { return std::move(out_); }

private:
    std::vector<char> out_;
};

class Reader
{
public:
    explicit Reader(const std::vector<char>& in) : in_(in) {}

    template <typename T>
    T pod()
    {
        T v;
        need(sizeof(T));
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string str()
    {
        auto n = pod<std::uint32_t>();
        need(n);
        std::string s(in_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    void raw(void* dst, std::size_t n)
    {
        need(n);
        std::memcpy(dst, in_.data() + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > in_.size()) {
            throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }

    const std::vector<char>& in_;
    std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const
{
    for (const auto& t : tensors) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

std::vector<char> serialize(const Checkpoint& ckpt)
{
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.pod(static_cast<std::uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
        w.str(k);
        w.str(v);
    }
    w.pod(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        if (num_elements(t.shape) != t.values.size()) {
            throw CheckpointError("tensor '" + t.name + "' has inconsistent shape");
        }
        w.str(t.name);
        w.pod(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) {
            w.pod(static_cast<std::uint64_t>(d));
        }
        w.raw(t.values.data(), t.values.size() * sizeof(double));
    }
    return w.take();
}

Checkpoint deserialize(const std::vector<char>& bytes)
{
    Reader r(bytes);
    char magic[sizeof(kMagic)];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("not a hycaps checkpoint (bad magic)");
    }
    Checkpoint ckpt;
    const auto meta = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < meta; ++i) {
        auto k = r.str();
        ckpt.metadata[k] = r.str();
    }
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str();
        const auto rank = r.pod<std::uint32_t>();
        for (std::uint32_t d = 0; d < rank; ++d) {
            t.shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>()));
        }
        t.values.resize(num_elements(t.shape));
        r.raw(t.values.data(), t.values.size() * sizeof(double));
        ckpt.tensors.push_back(std::move(t));
    }
    if (!r.done()) {
        throw CheckpointError("trailing bytes after checkpoint payload");
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    const auto bytes = serialize(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError("cannot write checkpoint " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot read checkpoint " + path.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

Checkpoint snapshot(const ModelGraph& graph, const std::string& prefix)
{
    Checkpoint ckpt;
    for (const auto& layer : graph.layers()) {
        if (!layer.name.starts_with(prefix)) {
            continue;
        }
        for (const auto& [pname, t] : layer.params) {
            ckpt.tensors.push_back(NamedTensor{layer.name + "." + pname, t.shape(),
                                               std::vector<double>(t.values().begin(), t.values().end())});
        }
    }
    return ckpt;
}

void restore(ModelGraph& graph, const Checkpoint& ckpt, const std::string& prefix, bool strict)
{
    std::set<std::string> used;
    for (auto& layer : graph.layers()) {
        if (!layer.name.starts_with(prefix)) {
            continue;
        }
        for (auto& [pname, t] : layer.params) {
            const auto full = layer.name + "." + pname;
            const auto* src = ckpt.find(full);
            if (src == nullptr) {
                throw CheckpointError("architecture mismatch: checkpoint lacks '" + full + "'");
            }
            if (src->shape != t.shape()) {
                throw CheckpointError("architecture mismatch: '" + full + "' is " +
                                      shape_str(src->shape) + " in the checkpoint but " +
                                      shape_str(t.shape()) + " in the model");
            }
            std::copy(src->values.begin(), src->values.end(), t.data().begin());
            used.insert(full);
        }
    }
    if (strict) {
        for (const auto& t : ckpt.tensors) {
            if (t.name.starts_with(prefix) && !used.count(t.name)) {
                throw CheckpointError("architecture mismatch: checkpoint has unexpected '" +
                                      t.name + "'");
            }
        }
    }
}

}  // namespace hycaps
