// Feature encoder f(.): clip (+ mask) -> d-dimensional representation.
//
// Primary path is a Transformer: per-frame projection N -> d_model, fixed
// sinusoidal positional encoding, then n_layers of masked multi-head
// self-attention + FFN blocks (post-norm residuals), mean-pooled over all
// T_w positions. A gated-recurrent baseline shares the interface; it ignores
// the mask.
#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "respira/errors.hpp"
#include "respira/masking.hpp"
#include "respira/melspec.hpp"
#include "respira/optim.hpp"
#include "respira/rng.hpp"
#include "respira/serialize.hpp"
#include "respira/tensor.hpp"

namespace respira {

enum class EncoderKind { kTransformer, kRecurrent };

inline const char* encoder_kind_name(EncoderKind k) {
    return k == EncoderKind::kTransformer ? "transformer" : "recurrent";
}

struct EncoderConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int ffn_dim = 128;
    double dropout = 0.2;
    EncoderKind kind = EncoderKind::kTransformer;
    int n_bins = 64;                 // input feature rows per frame
    bool positional_encoding = true;
    bool normalize_frames = true;    // per-frame standardization of the input

    void validate() const {
        if (d_model < 1 || n_layers < 1 || n_heads < 1 || ffn_dim < 1 || n_bins < 1)
            throw InvalidConfig("encoder dims must be positive");
        if (d_model % n_heads != 0)
            throw InvalidConfig("d_model must be divisible by n_heads");
        if (dropout < 0.0 || dropout >= 1.0)
            throw InvalidConfig("dropout must be in [0,1)");
    }

    std::string canonical() const {
        std::ostringstream os;
        os << "kind=" << encoder_kind_name(kind) << ";n_bins=" << n_bins
           << ";d_model=" << d_model << ";n_layers=" << n_layers
           << ";n_heads=" << n_heads << ";ffn_dim=" << ffn_dim
           << ";dropout=" << dropout << ";pe=" << positional_encoding
           << ";normalize_frames=" << normalize_frames;
        return os.str();
    }
    uint64_t hash() const { return fnv1a(canonical()); }
};

namespace detail {

// sinusoidal table, memoized per (t_w, d)
template <typename S>
const std::vector<S>& positional_table(size_t t_w, size_t d) {
    thread_local std::map<std::pair<size_t, size_t>, std::vector<S>> cache;
    auto key = std::make_pair(t_w, d);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<S> pe(t_w * d);
    for (size_t pos = 0; pos < t_w; ++pos)
        for (size_t i = 0; i < d; ++i) {
            const double angle =
                pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
            pe[pos * d + i] = static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return cache.emplace(key, std::move(pe)).first->second;
}

}  // namespace detail

/// Clip as encoder input: T_w x N constant, optionally standardized per frame
/// (each time step to zero mean / unit variance over its N bins).
template <typename S>
Tensor<S> clip_to_input(const MelClip& clip, const EncoderConfig& cfg) {
    if (clip.n_bins != static_cast<size_t>(cfg.n_bins))
        throw ShapeMismatch("clip has " + std::to_string(clip.n_bins) + " bins, encoder expects " +
                            std::to_string(cfg.n_bins));
    const size_t t_w = clip.n_frames, n = clip.n_bins;
    std::vector<S> vals(t_w * n);
    for (size_t t = 0; t < t_w; ++t) {
        if (cfg.normalize_frames) {
            double mean = 0.0;
            for (size_t b = 0; b < n; ++b) mean += clip.at(b, t);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (size_t b = 0; b < n; ++b) {
                const double d = clip.at(b, t) - mean;
                var += d * d;
            }
            const double istd = 1.0 / (std::sqrt(var / static_cast<double>(n)) + 1e-5);
            for (size_t b = 0; b < n; ++b)
                vals[t * n + b] = static_cast<S>((clip.at(b, t) - mean) * istd);
        } else {
            for (size_t b = 0; b < n; ++b) vals[t * n + b] = static_cast<S>(clip.at(b, t));
        }
    }
    return Tensor<S>::from_values({t_w, n}, std::move(vals));
}

template <typename S>
void init_transformer_params(ParameterStore<S>& store, const std::string& prefix,
                             const EncoderConfig& cfg, Rng& rng) {
    const size_t d = cfg.d_model, nb = cfg.n_bins, f = cfg.ffn_dim;
    auto mat = [&](const std::string& name, size_t in, size_t out) {
        store.create(prefix + name, {in, out}, xavier_uniform<S>(in, out, in * out, rng));
    };
    auto vec = [&](const std::string& name, size_t n, S v) {
        store.create(prefix + name, {n}, std::vector<S>(n, v));
    };
    mat("in.w", nb, d);
    vec("in.b", d, S(0));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = "l" + std::to_string(l) + ".";
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) mat(lp + w, d, d);
        for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) vec(lp + b, d, S(0));
        vec(lp + "ln1.g", d, S(1));
        vec(lp + "ln1.b", d, S(0));
        mat(lp + "ffn.w1", d, f);
        vec(lp + "ffn.b1", f, S(0));
        mat(lp + "ffn.w2", f, d);
        vec(lp + "ffn.b2", d, S(0));
        vec(lp + "ln2.g", d, S(1));
        vec(lp + "ln2.b", d, S(0));
    }
}

template <typename S>
void init_recurrent_params(ParameterStore<S>& store, const std::string& prefix,
                           const EncoderConfig& cfg, Rng& rng) {
    const size_t d = cfg.d_model, nb = cfg.n_bins;
    for (const char* g : {"z", "r", "h"}) {
        store.create(prefix + std::string("gru.w") + g, {nb, d},
                     xavier_uniform<S>(nb, d, nb * d, rng));
        store.create(prefix + std::string("gru.u") + g, {d, d},
                     xavier_uniform<S>(d, d, d * d, rng));
        store.create(prefix + std::string("gru.b") + g, {d}, std::vector<S>(d, S(0)));
    }
}

template <typename S>
void init_encoder_params(ParameterStore<S>& store, const std::string& prefix,
                         const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.kind == EncoderKind::kTransformer)
        init_transformer_params(store, prefix, cfg, rng);
    else
        init_recurrent_params(store, prefix, cfg, rng);
}

namespace detail {

template <typename S>
struct ParamAccess {
    const ParameterStore<S>& store;
    std::string prefix;
    bool frozen;
    Tensor<S> operator()(const std::string& name) const {
        Tensor<S> t = store.get(prefix + name);
        return frozen ? stop_grad(t) : t;
    }
};

template <typename S>
void check_encoder_compat(const ParameterStore<S>& store, const EncoderConfig& cfg) {
    if (store.config_hash != 0 && store.config_hash != cfg.hash())
        throw ConfigMismatch("parameter store was created for a different encoder configuration");
}

}  // namespace detail

/// Per-position outputs of the masked Transformer, T_w x d_model.
template <typename S>
Tensor<S> encode_sequence(const ParameterStore<S>& store, const std::string& prefix,
                          const EncoderConfig& cfg, const MelClip& clip,
                          const MaskMatrix& mask, bool train, Rng& rng,
                          bool frozen = false) {
    cfg.validate();
    detail::check_encoder_compat(store, cfg);
    if (mask.length() != clip.n_frames)
        throw ShapeMismatch("mask length " + std::to_string(mask.length()) +
                            " != clip frames " + std::to_string(clip.n_frames));
    const size_t t_w = clip.n_frames;
    const size_t d = cfg.d_model;
    const size_t dk = d / cfg.n_heads;
    detail::ParamAccess<S> P{store, prefix, frozen};

    Tensor<S> h = add(matmul(clip_to_input<S>(clip, cfg), P("in.w")), P("in.b"));
    if (cfg.positional_encoding) {
        const auto& pe = detail::positional_table<S>(t_w, d);
        h = add(h, Tensor<S>::from_values({t_w, d}, pe));
    }
    const auto blocked = attention_blocked(mask);
    const S neg_inf = -std::numeric_limits<S>::infinity();

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = "l" + std::to_string(l) + ".";
        auto q = add(matmul(h, P(lp + "attn.wq")), P(lp + "attn.bq"));
        auto k = add(matmul(h, P(lp + "attn.wk")), P(lp + "attn.bk"));
        auto v = add(matmul(h, P(lp + "attn.wv")), P(lp + "attn.bv"));
        std::vector<Tensor<S>> heads;
        heads.reserve(cfg.n_heads);
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            auto qh = slice(q, 1, hd * dk, dk);
            auto kh = slice(k, 1, hd * dk, dk);
            auto vh = slice(v, 1, hd * dk, dk);
            auto scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
            scores = masked_fill(scores, blocked, neg_inf);
            heads.push_back(matmul(softmax(scores, 1), vh));
        }
        auto attn = add(matmul(concat(heads, 1), P(lp + "attn.wo")), P(lp + "attn.bo"));
        attn = dropout(attn, cfg.dropout, train, rng);
        h = layer_norm(add(h, attn), P(lp + "ln1.g"), P(lp + "ln1.b"));
        auto mid = relu(add(matmul(h, P(lp + "ffn.w1")), P(lp + "ffn.b1")));
        auto ffn = add(matmul(mid, P(lp + "ffn.w2")), P(lp + "ffn.b2"));
        ffn = dropout(ffn, cfg.dropout, train, rng);
        h = layer_norm(add(h, ffn), P(lp + "ln2.g"), P(lp + "ln2.b"));
    }
    return h;
}

/// Attention probability rows for one layer/head, eval mode. Test hook: rows
/// are probability vectors with exact zeros at masked keys (other than self).
template <typename S>
Tensor<S> attention_probs(const ParameterStore<S>& store, const std::string& prefix,
                          const EncoderConfig& cfg, const MelClip& clip,
                          const MaskMatrix& mask, int layer, int head) {
    cfg.validate();
    Rng rng(0);
    const size_t d = cfg.d_model;
    const size_t dk = d / cfg.n_heads;
    detail::ParamAccess<S> P{store, prefix, /*frozen=*/true};
    Tensor<S> h = add(matmul(clip_to_input<S>(clip, cfg), P("in.w")), P("in.b"));
    if (cfg.positional_encoding) {
        const auto& pe = detail::positional_table<S>(clip.n_frames, d);
        h = add(h, Tensor<S>::from_values({clip.n_frames, d}, pe));
    }
    const auto blocked = attention_blocked(mask);
    const S neg_inf = -std::numeric_limits<S>::infinity();
    for (int l = 0; ; ++l) {
        const std::string lp = "l" + std::to_string(l) + ".";
        auto q = add(matmul(h, P(lp + "attn.wq")), P(lp + "attn.bq"));
        auto k = add(matmul(h, P(lp + "attn.wk")), P(lp + "attn.bk"));
        auto v = add(matmul(h, P(lp + "attn.wv")), P(lp + "attn.bv"));
        std::vector<Tensor<S>> heads;
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            auto qh = slice(q, 1, hd * dk, dk);
            auto kh = slice(k, 1, hd * dk, dk);
            auto scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
            scores = masked_fill(scores, blocked, neg_inf);
            auto probs = softmax(scores, 1);
            if (l == layer && hd == head) return probs;
            heads.push_back(matmul(probs, slice(v, 1, hd * dk, dk)));
        }
        auto attn = add(matmul(concat(heads, 1), P(lp + "attn.wo")), P(lp + "attn.bo"));
        h = layer_norm(add(h, attn), P(lp + "ln1.g"), P(lp + "ln1.b"));
        auto mid = relu(add(matmul(h, P(lp + "ffn.w1")), P(lp + "ffn.b1")));
        auto ffn = add(matmul(mid, P(lp + "ffn.w2")), P(lp + "ffn.b2"));
        h = layer_norm(add(h, ffn), P(lp + "ln2.g"), P(lp + "ln2.b"));
    }
}

/// Recurrent baseline: gated pass over the T_w frames, final hidden state.
template <typename S>
Tensor<S> encode_recurrent(const ParameterStore<S>& store, const std::string& prefix,
                           const EncoderConfig& cfg, const MelClip& clip, bool train,
                           Rng& rng, bool frozen = false) {
    cfg.validate();
    detail::check_encoder_compat(store, cfg);
    const size_t d = cfg.d_model;
    detail::ParamAccess<S> P{store, prefix, frozen};
    auto x = clip_to_input<S>(clip, cfg);
    auto wz = P("gru.wz"), wr = P("gru.wr"), wh = P("gru.wh");
    auto uz = P("gru.uz"), ur = P("gru.ur"), uh = P("gru.uh");
    auto bz = P("gru.bz"), br = P("gru.br"), bh = P("gru.bh");
    Tensor<S> h = Tensor<S>::zeros({1, d});
    for (size_t t = 0; t < clip.n_frames; ++t) {
        auto xt = slice(x, 0, t, 1);
        auto z = sigmoid(add(add(matmul(xt, wz), matmul(h, uz)), bz));
        auto r = sigmoid(add(add(matmul(xt, wr), matmul(h, ur)), br));
        auto cand = tanh_op(add(add(matmul(xt, wh), matmul(mul(r, h), uh)), bh));
        h = add(sub(h, mul(z, h)), mul(z, cand));
    }
    h = dropout(h, cfg.dropout, train, rng);
    return reshape(h, {d});
}

/// The encoder map h = f(clip, mask; W). Dispatches on cfg.kind; the
/// recurrent baseline has no masking path and ignores the mask.
template <typename S>
Tensor<S> encode(const ParameterStore<S>& store, const std::string& prefix,
                 const EncoderConfig& cfg, const MelClip& clip, const MaskMatrix& mask,
                 bool train, Rng& rng, bool frozen = false) {
    if (cfg.kind == EncoderKind::kRecurrent)
        return encode_recurrent(store, prefix, cfg, clip, train, rng, frozen);
    auto seq = encode_sequence(store, prefix, cfg, clip, mask, train, rng, frozen);
    return reshape(mean_axis(seq, 0), {static_cast<size_t>(cfg.d_model)});
}

}  // namespace respira
