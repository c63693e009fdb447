// Single-file weight container.
//
// Layout (all integers little-endian):
//   magic "RSPW", u32 version
//   tensor records: u32 name_len, name bytes, u8 dtype (0=f32, 1=f64),
//                   u32 rank, u64 dims[rank], payload
//   trailing record: name_len=0, u64 config_hash, u32 tag_len, tag bytes,
//                    u32 cfg_len, canonical config string
// The trailing config-hash record is compared at load time so a checkpoint
// trained under one encoder architecture fails loudly under another.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "respira/errors.hpp"
#include "respira/optim.hpp"
#include "respira/tensor.hpp"

namespace respira {

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}
template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

inline void write_f32_payload(std::ostream& os, const float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        write_le<uint32_t>(os, bits);
    }
}
inline void write_f64_payload(std::ostream& os, const double* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        write_le<uint64_t>(os, bits);
    }
}

}  // namespace detail

struct StoredTensor {
    Shape shape;
    int dtype = 0;  // 0=f32, 1=f64
    std::vector<double> values;  // widened on read
};

struct WeightFile {
    std::map<std::string, StoredTensor> tensors;
    uint64_t config_hash = 0;
    std::string phase_tag;
    std::string config_text;
};

constexpr uint32_t kWeightFileVersion = 1;

template <typename S>
void save_store(const ParameterStore<S>& store, const std::string& path,
                const std::string& config_text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os.write("RSPW", 4);
    detail::write_le<uint32_t>(os, kWeightFileVersion);
    const uint8_t dtype = sizeof(S) == 4 ? 0 : 1;
    for (const auto& [name, t] : store.entries()) {
        detail::write_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<uint8_t>(os, dtype);
        detail::write_le<uint32_t>(os, static_cast<uint32_t>(t.rank()));
        for (size_t d : t.shape()) detail::write_le<uint64_t>(os, d);
        if constexpr (sizeof(S) == 4)
            detail::write_f32_payload(os, reinterpret_cast<const float*>(t.values().data()), t.numel());
        else
            detail::write_f64_payload(os, reinterpret_cast<const double*>(t.values().data()), t.numel());
    }
    detail::write_le<uint32_t>(os, 0);  // trailing record marker
    detail::write_le<uint64_t>(os, store.config_hash);
    detail::write_le<uint32_t>(os, static_cast<uint32_t>(store.phase_tag.size()));
    os.write(store.phase_tag.data(), static_cast<std::streamsize>(store.phase_tag.size()));
    detail::write_le<uint32_t>(os, static_cast<uint32_t>(config_text.size()));
    os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    if (!os) throw IoError("short write to " + path);
}

inline WeightFile load_weight_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RSPW", 4) != 0)
        throw ParseError(path + ": not a weight container");
    const uint32_t version = detail::read_le<uint32_t>(is);
    if (version != kWeightFileVersion)
        throw ParseError(path + ": unsupported container version " + std::to_string(version));
    WeightFile wf;
    for (;;) {
        const uint32_t name_len = detail::read_le<uint32_t>(is);
        if (!is) throw ParseError(path + ": truncated container");
        if (name_len == 0) break;  // trailing record
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        StoredTensor st;
        st.dtype = detail::read_le<uint8_t>(is);
        const uint32_t rank = detail::read_le<uint32_t>(is);
        size_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            st.shape.push_back(static_cast<size_t>(detail::read_le<uint64_t>(is)));
            numel *= st.shape.back();
        }
        st.values.resize(numel);
        for (size_t i = 0; i < numel; ++i) {
            if (st.dtype == 0) {
                uint32_t bits = detail::read_le<uint32_t>(is);
                float f;
                std::memcpy(&f, &bits, 4);
                st.values[i] = f;
            } else {
                uint64_t bits = detail::read_le<uint64_t>(is);
                double d;
                std::memcpy(&d, &bits, 8);
                st.values[i] = d;
            }
        }
        if (!is) throw ParseError(path + ": truncated tensor record " + name);
        wf.tensors.emplace(std::move(name), std::move(st));
    }
    wf.config_hash = detail::read_le<uint64_t>(is);
    const uint32_t tag_len = detail::read_le<uint32_t>(is);
    wf.phase_tag.resize(tag_len);
    is.read(wf.phase_tag.data(), tag_len);
    const uint32_t cfg_len = detail::read_le<uint32_t>(is);
    wf.config_text.resize(cfg_len);
    is.read(wf.config_text.data(), cfg_len);
    if (!is) throw ParseError(path + ": truncated trailing record");
    return wf;
}

/// Copy stored tensors into existing store parameters whose names carry
/// `prefix`, matching against the file names with `file_prefix`.
/// Shape mismatches and missing tensors raise ConfigMismatch.
template <typename S>
void load_into_store(const WeightFile& wf, ParameterStore<S>& store,
                     const std::string& file_prefix, const std::string& store_prefix) {
    for (const auto& name : store.names_with_prefix(store_prefix)) {
        const std::string want = file_prefix + name.substr(store_prefix.size());
        auto it = wf.tensors.find(want);
        if (it == wf.tensors.end())
            throw ConfigMismatch("weight file lacks tensor " + want);
        Tensor<S> t = store.get(name);
        if (it->second.shape != t.shape())
            throw ConfigMismatch("tensor " + want + " has shape " + shape_str(it->second.shape) +
                                 ", expected " + shape_str(t.shape()));
        auto& vals = t.mutable_values();
        for (size_t i = 0; i < vals.size(); ++i)
            vals[i] = static_cast<S>(it->second.values[i]);
    }
}

}  // namespace respira
