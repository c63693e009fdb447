// Deterministic random source. xoshiro256++ seeded through splitmix64, with
// fully specified uniform/normal/integer mappings so a given seed produces the
// same stream on every platform and compiler. All randomness in the library
// flows through this type; callers own one stream per worker.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace respira {

class Rng {
public:
    explicit Rng(uint64_t seed) {
        // splitmix64 expansion of the seed into the four lanes
        uint64_t x = seed;
        for (auto& lane : s_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            lane = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0,1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (two uniform draws per sample).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n). n must be > 0.
    size_t uniform_int(size_t n) {
        // Lemire's multiply-shift; bias is negligible for n << 2^64 and the
        // mapping is fully specified.
        return static_cast<size_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// k distinct indices from [0, n), uniform without replacement.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (size_t i = 0; i < k && i + 1 < n; ++i) {
            size_t j = i + uniform_int(n - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k < n ? k : n);
        return idx;
    }

    /// Derived stream: decorrelated child generator for a named substream.
    Rng fork(uint64_t stream) {
        uint64_t mix = next_u64();
        return Rng(mix ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
};

}  // namespace respira
