#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glio/error.hpp"
#include "glio/nn.hpp"

namespace glio {

// Versioned checkpoint container shared by the segmenter and the classifier:
// magic "GLCK", u32 format version, JSON metadata blob (kind, config,
// training log), then named f32 tensors. Little-endian throughout.
struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    nlohmann::json meta;

    struct NamedTensor {
        std::string name;
        std::vector<std::uint32_t> dims;
        std::vector<float> data;
    };
    std::vector<NamedTensor> tensors;
};

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw data_error("corrupt checkpoint (truncated): " + path);
    return v;
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw runtime_error("cannot write checkpoint: " + path);
    out.write("GLCK", 4);
    detail::write_pod(out, Checkpoint::kFormatVersion);
    const std::string meta = ckpt.meta.dump();
    detail::write_pod(out, static_cast<std::uint64_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        detail::write_pod(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::write_pod(out, static_cast<std::uint32_t>(t.dims.size()));
        for (std::uint32_t d : t.dims) detail::write_pod(out, d);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "GLCK")
        throw data_error("corrupt checkpoint (bad magic): " + path);
    const auto version = detail::read_pod<std::uint32_t>(in, path);
    if (version != Checkpoint::kFormatVersion)
        throw data_error("unsupported checkpoint format version " + std::to_string(version) +
                         ": " + path);
    const auto meta_len = detail::read_pod<std::uint64_t>(in, path);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw data_error("corrupt checkpoint (truncated metadata): " + path);

    Checkpoint ckpt;
    try {
        ckpt.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw data_error("corrupt checkpoint (bad metadata JSON): " + path + ": " + e.what());
    }
    const auto count = detail::read_pod<std::uint64_t>(in, path);
    ckpt.tensors.resize(count);
    for (auto& t : ckpt.tensors) {
        const auto name_len = detail::read_pod<std::uint32_t>(in, path);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const auto rank = detail::read_pod<std::uint32_t>(in, path);
        if (rank > 8) throw data_error("corrupt checkpoint (bad tensor rank): " + path);
        t.dims.resize(rank);
        std::uint64_t n = 1;
        for (auto& d : t.dims) {
            d = detail::read_pod<std::uint32_t>(in, path);
            n *= d;
        }
        t.data.resize(n);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!in) throw data_error("corrupt checkpoint (truncated tensor data): " + path);
    }
    return ckpt;
}

inline void store_params(Checkpoint& ckpt, const nn::ParamStore<float>& store) {
    for (const auto& p : store.params()) {
        Checkpoint::NamedTensor t;
        t.name = p.name;
        t.dims.assign(p.shape.begin(), p.shape.end());
        t.data = p.w;
        ckpt.tensors.push_back(std::move(t));
    }
}

inline void restore_params(const Checkpoint& ckpt, nn::ParamStore<float>& store,
                           const std::string& context) {
    if (ckpt.tensors.size() != store.params().size())
        throw data_error(context + ": checkpoint tensor count " +
                         std::to_string(ckpt.tensors.size()) + " does not match model (" +
                         std::to_string(store.params().size()) + ")");
    std::size_t i = 0;
    for (auto& p : store.params()) {
        const auto& t = ckpt.tensors[i++];
        if (t.name != p.name)
            throw data_error(context + ": checkpoint tensor '" + t.name + "' where model expects '" +
                             p.name + "'");
        if (t.data.size() != p.w.size())
            throw data_error(context + ": tensor '" + t.name + "' size mismatch");
        p.w = t.data;
    }
}

} // namespace glio
