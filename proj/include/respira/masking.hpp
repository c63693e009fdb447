// Per-clip random time-step masks and their attention semantics.
//
// A mask hides exactly round(rate * T_w) time steps, drawn uniformly without
// replacement. Masked steps are removed as attention keys/values for every
// other query; each position keeps its own key (bias[q][q] = 0), so the
// attention softmax is never over an empty set, and all positions still emit
// outputs through the feed-forward path. At rate 1 there is no attention
// between any two distinct time steps.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "respira/errors.hpp"
#include "respira/rng.hpp"

namespace respira {

struct MaskMatrix {
    std::vector<uint8_t> kept;  // 1 = visible, 0 = masked
    double rate = 0.0;

    size_t length() const { return kept.size(); }
    size_t masked_count() const {
        size_t n = 0;
        for (uint8_t k : kept) n += !k;
        return n;
    }
};

inline MaskMatrix generate_mask(size_t t_w, double rate, Rng& rng) {
    if (rate < 0.0 || rate > 1.0)
        throw InvalidConfig("masking rate must be in [0,1], got " + std::to_string(rate));
    MaskMatrix m;
    m.rate = rate;
    m.kept.assign(t_w, 1);
    const size_t k = static_cast<size_t>(std::lround(rate * static_cast<double>(t_w)));
    for (size_t i : rng.sample_without_replacement(t_w, k)) m.kept[i] = 0;
    return m;
}

/// Row-major T_w x T_w fill flags: 1 where key k is masked for query q
/// (k masked and k != q).
inline std::vector<uint8_t> attention_blocked(const MaskMatrix& mask) {
    const size_t t = mask.length();
    std::vector<uint8_t> blocked(t * t, 0);
    for (size_t q = 0; q < t; ++q)
        for (size_t k = 0; k < t; ++k)
            if (!mask.kept[k] && k != q) blocked[q * t + k] = 1;
    return blocked;
}

/// Additive attention bias: -inf where a key is removed, 0 elsewhere
/// (including the diagonal).
template <typename S>
std::vector<S> attention_bias(const MaskMatrix& mask) {
    const auto blocked = attention_blocked(mask);
    std::vector<S> bias(blocked.size(), S(0));
    for (size_t i = 0; i < blocked.size(); ++i)
        if (blocked[i]) bias[i] = -std::numeric_limits<S>::infinity();
    return bias;
}

}  // namespace respira
