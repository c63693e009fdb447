// 16-bit PCM WAV in/out and sample-rate conversion.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "respira/errors.hpp"

namespace respira {

struct RawAudio {
    std::vector<float> samples;  // mono, [-1, 1]
    int sample_rate = 0;
    std::string source_id;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

namespace detail {

inline uint32_t rd_u32(const unsigned char* p) {
    return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t rd_u16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace detail

/// Reads a 16-bit PCM WAV file; multi-channel input is averaged to mono.
inline RawAudio read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw ParseError(path + ": not a RIFF/WAVE file");

    uint16_t channels = 0, bits = 0, format = 0;
    uint32_t rate = 0;
    const unsigned char* data = nullptr;
    size_t data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t sz = detail::rd_u32(bytes.data() + pos + 4);
        const unsigned char* body = bytes.data() + pos + 8;
        if (pos + 8 + sz > bytes.size()) throw ParseError(path + ": truncated chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (sz < 16) throw ParseError(path + ": short fmt chunk");
            format = detail::rd_u16(body);
            channels = detail::rd_u16(body + 2);
            rate = detail::rd_u32(body + 4);
            bits = detail::rd_u16(body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = body;
            data_len = sz;
        }
        pos += 8 + sz + (sz & 1);  // chunks are word-aligned
    }
    if (format != 1 || bits != 16)
        throw ParseError(path + ": only 16-bit PCM WAV is supported");
    if (channels == 0 || rate == 0 || data == nullptr)
        throw ParseError(path + ": missing fmt or data chunk");

    const size_t frames = data_len / (2 * channels);
    RawAudio out;
    out.sample_rate = static_cast<int>(rate);
    out.source_id = path;
    out.samples.resize(frames);
    for (size_t i = 0; i < frames; ++i) {
        int32_t acc = 0;
        for (uint16_t c = 0; c < channels; ++c) {
            const unsigned char* p = data + 2 * (i * channels + c);
            acc += static_cast<int16_t>(p[0] | (p[1] << 8));
        }
        out.samples[i] = static_cast<float>(acc) / (32768.0f * channels);
    }
    return out;
}

inline void write_wav(const std::string& path, std::span<const float> samples, int rate) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    auto u32 = [&](uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<char*>(b), 4);
    };
    auto u16 = [&](uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
        os.write(reinterpret_cast<char*>(b), 2);
    };
    const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    os.write("RIFF", 4);
    u32(36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    u32(16);
    u16(1);  // PCM
    u16(1);  // mono
    u32(static_cast<uint32_t>(rate));
    u32(static_cast<uint32_t>(rate) * 2);
    u16(2);
    u16(16);
    os.write("data", 4);
    u32(data_bytes);
    for (float s : samples) {
        const float clamped = std::min(1.0f, std::max(-1.0f, s));
        const int16_t q = static_cast<int16_t>(std::lrint(clamped * 32767.0f));
        u16(static_cast<uint16_t>(q));
    }
    if (!os) throw IoError("short write to " + path);
}

/// Linear-interpolation resampling; identity when rates already match.
inline RawAudio resample_linear(const RawAudio& in, int target_rate) {
    if (target_rate <= 0) throw InvalidConfig("target sample rate must be positive");
    if (in.sample_rate == target_rate) return in;
    RawAudio out;
    out.sample_rate = target_rate;
    out.source_id = in.source_id;
    if (in.samples.empty()) return out;
    const double ratio = static_cast<double>(in.sample_rate) / target_rate;
    const size_t n = static_cast<size_t>(
        std::floor(static_cast<double>(in.samples.size() - 1) / ratio)) + 1;
    out.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const double src = i * ratio;
        const size_t lo = static_cast<size_t>(src);
        const size_t hi = std::min(lo + 1, in.samples.size() - 1);
        const double frac = src - lo;
        out.samples[i] = static_cast<float>((1.0 - frac) * in.samples[lo] + frac * in.samples[hi]);
    }
    return out;
}

}  // namespace respira
