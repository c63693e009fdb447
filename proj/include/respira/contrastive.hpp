// Phase 1: contrastive pre-training. Participant-level positive pairs, a
// d->d->d projection head, cosine or bilinear similarity, and the batch
// contrastive loss: mean over all 2B anchors i of
//   -log( exp(sim(i, pair(i))/tau) / sum_{k != i} exp(sim(i,k)/tau) )
// where the denominator runs over every other clip in the batch, positive
// included. No labels are read anywhere in this phase.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "respira/encoder.hpp"
#include "respira/errors.hpp"
#include "respira/masking.hpp"
#include "respira/melspec.hpp"
#include "respira/optim.hpp"
#include "respira/rng.hpp"
#include "respira/tensor.hpp"

namespace respira {

enum class SimilarityKind { kCosine, kBilinear };

inline const char* similarity_name(SimilarityKind k) {
    return k == SimilarityKind::kCosine ? "cosine" : "bilinear";
}

struct ContrastiveConfig {
    SimilarityKind metric = SimilarityKind::kBilinear;
    double temperature = 0.1;
    int batch = 1024;      // full-scale default; desk configs use 64
    double mask_rate = 0.5;
    int epochs = 40;
};

/// B positive pairs of clip ids, one pair per participant, distinct
/// participants across instances.
struct ContrastiveBatch {
    std::vector<std::pair<size_t, size_t>> pairs;
};

/// Participants eligible for pair sampling: two clips must be drawable, so
/// single-clip participants are excluded.
inline std::vector<size_t> eligible_participants(
    const std::vector<std::vector<size_t>>& participant_clips) {
    std::vector<size_t> out;
    for (size_t p = 0; p < participant_clips.size(); ++p)
        if (participant_clips[p].size() >= 2) out.push_back(p);
    return out;
}

inline ContrastiveBatch sample_batch(const std::vector<std::vector<size_t>>& participant_clips,
                                     size_t batch, Rng& rng) {
    const auto eligible = eligible_participants(participant_clips);
    if (eligible.size() < batch)
        throw InsufficientParticipants(
            "batch of " + std::to_string(batch) + " pairs needs as many participants with >= 2 clips, have " +
            std::to_string(eligible.size()));
    ContrastiveBatch out;
    out.pairs.reserve(batch);
    for (size_t pick : rng.sample_without_replacement(eligible.size(), batch)) {
        const auto& pool = participant_clips[eligible[pick]];
        const size_t i = rng.uniform_int(pool.size());
        size_t j = rng.uniform_int(pool.size() - 1);
        if (j >= i) ++j;  // two distinct clips, uniform over ordered pairs
        out.pairs.emplace_back(pool[i], pool[j]);
    }
    return out;
}

template <typename S>
void init_projection_params(ParameterStore<S>& store, const std::string& prefix, size_t d,
                            Rng& rng, double output_gain = 1.0) {
    store.create(prefix + "w1", {d, d}, xavier_uniform<S>(d, d, d * d, rng));
    store.create(prefix + "b1", {d}, std::vector<S>(d, S(0)));
    store.create(prefix + "w2", {d, d}, xavier_uniform<S>(d, d, d * d, rng, output_gain));
    store.create(prefix + "b2", {d}, std::vector<S>(d, S(0)));
}

/// Bilinear parameter W_s, identity-initialized so training starts from a
/// plain dot product.
template <typename S>
void init_similarity_params(ParameterStore<S>& store, const std::string& name, size_t d) {
    std::vector<S> eye(d * d, S(0));
    for (size_t i = 0; i < d; ++i) eye[i * d + i] = S(1);
    store.create(name, {d, d}, std::move(eye));
}

/// Projection head g(.): one rectified hidden layer, widths d -> d -> d.
template <typename S>
Tensor<S> project(const ParameterStore<S>& store, const std::string& prefix,
                  const Tensor<S>& h) {
    auto mid = relu(add(matmul(h, store.get(prefix + "w1")), store.get(prefix + "b1")));
    return add(matmul(mid, store.get(prefix + "w2")), store.get(prefix + "b2"));
}

/// All-pairs similarity matrix of the 2B projected rows.
template <typename S>
Tensor<S> similarity_matrix(const Tensor<S>& z, SimilarityKind kind,
                            const Tensor<S>* w_s = nullptr) {
    if (z.rank() != 2) throw ShapeMismatch("similarity_matrix expects a row matrix");
    if (kind == SimilarityKind::kBilinear) {
        if (w_s == nullptr) throw InvalidConfig("bilinear similarity needs W_s");
        return matmul(matmul(z, *w_s), transpose(z));
    }
    auto norms_sq = sum_axis(mul(z, z), 1);  // {m,1}
    for (S v : norms_sq.values())
        if (v <= S(0)) throw ZeroNorm("cosine similarity of a zero vector");
    auto zn = div(z, sqrt_op(norms_sq));
    return matmul(zn, transpose(zn));
}

/// Scalar similarity of two latent vectors (evaluation-side, no graph).
inline double similarity(std::span<const double> zi, std::span<const double> zj,
                         SimilarityKind kind, std::span<const double> w_s = {}) {
    if (zi.size() != zj.size()) throw ShapeMismatch("similarity of unequal-length vectors");
    const size_t d = zi.size();
    if (kind == SimilarityKind::kCosine) {
        double ni = 0, nj = 0, dp = 0;
        for (size_t k = 0; k < d; ++k) {
            ni += zi[k] * zi[k];
            nj += zj[k] * zj[k];
            dp += zi[k] * zj[k];
        }
        if (ni == 0.0 || nj == 0.0) throw ZeroNorm("cosine similarity of a zero vector");
        return dp / (std::sqrt(ni) * std::sqrt(nj));
    }
    if (w_s.size() != d * d) throw ShapeMismatch("W_s must be d x d");
    double acc = 0;
    for (size_t r = 0; r < d; ++r) {
        double row = 0;
        for (size_t c = 0; c < d; ++c) row += w_s[r * d + c] * zj[c];
        acc += zi[r] * row;
    }
    return acc;
}

/// Logits entering the contrastive softmax: similarities scaled by 1/tau with
/// the self-similarity diagonal removed.
template <typename S>
Tensor<S> contrastive_logits(const Tensor<S>& sim, double temperature) {
    if (temperature <= 0.0)
        throw NonPositiveTemperature("temperature must be > 0, got " + std::to_string(temperature));
    if (sim.rank() != 2 || sim.size(0) != sim.size(1))
        throw ShapeMismatch("similarity matrix must be square");
    const size_t m = sim.size(0);
    std::vector<uint8_t> diag(m * m, 0);
    for (size_t i = 0; i < m; ++i) diag[i * m + i] = 1;
    return masked_fill(scale(sim, 1.0 / temperature), diag,
                       -std::numeric_limits<S>::infinity());
}

/// Batch loss from a precomputed similarity matrix. pair_index maps each of
/// the 2B anchors to its positive.
template <typename S>
Tensor<S> contrastive_loss_from_similarity(const Tensor<S>& sim,
                                           const std::vector<size_t>& pair_index,
                                           double temperature) {
    const size_t m = sim.size(0);
    if (pair_index.size() != m) throw ShapeMismatch("one positive index per anchor required");
    for (size_t i = 0; i < m; ++i)
        if (pair_index[i] >= m || pair_index[i] == i)
            throw ShapeMismatch("pair index must point at another clip");
    auto log_p = log_softmax(contrastive_logits(sim, temperature), 1);
    return neg(mean_all(gather_rows(log_p, pair_index)));
}

/// Loss over a batch of projected rows (pairs adjacent: rows 2i and 2i+1).
template <typename S>
Tensor<S> contrastive_loss(const Tensor<S>& z, SimilarityKind kind, double temperature,
                           const Tensor<S>* w_s = nullptr) {
    const size_t m = z.size(0);
    if (m % 2 != 0) throw ShapeMismatch("contrastive batch holds 2B clips");
    std::vector<size_t> pair_index(m);
    for (size_t i = 0; i < m; ++i) pair_index[i] = i ^ 1;
    return contrastive_loss_from_similarity(similarity_matrix(z, kind, w_s), pair_index,
                                            temperature);
}

struct PretrainStepLog {
    long step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct PretrainResult {
    std::vector<PretrainStepLog> log;
    double first_loss = 0.0;
    double final_loss = 0.0;
    size_t effective_batch = 0;
};

/// The phase-1 loop: sample pairs -> mask -> encode -> project -> loss ->
/// backward -> Adam, with plateau decay driven by the epoch-mean loss.
/// The requested batch is clamped to the eligible-participant count (the
/// desk-scale corpora hold fewer participants than the paper's 1024).
template <typename S>
PretrainResult pretrain(ParameterStore<S>& store, const std::vector<MelClip>& clips,
                        const std::vector<std::vector<size_t>>& participant_clips,
                        const EncoderConfig& enc_cfg, const ContrastiveConfig& ctr_cfg,
                        const AdamConfig& opt_cfg, Rng& rng,
                        const std::function<void(const PretrainStepLog&)>& on_step = {}) {
    const auto eligible = eligible_participants(participant_clips);
    if (eligible.empty())
        throw InsufficientParticipants("no participant owns two or more clips");
    const size_t batch = std::min<size_t>(ctr_cfg.batch, eligible.size());
    const size_t steps_per_epoch = (eligible.size() + batch - 1) / batch;

    std::vector<Tensor<S>> trainable;
    for (const auto& [name, t] : store.entries()) trainable.push_back(t);
    Adam<S> opt(trainable, opt_cfg);
    const Tensor<S> w_s =
        ctr_cfg.metric == SimilarityKind::kBilinear ? store.get("sim.ws") : Tensor<S>();

    PretrainResult result;
    result.effective_batch = batch;
    long step = 0;
    for (int epoch = 0; epoch < ctr_cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (size_t s = 0; s < steps_per_epoch; ++s) {
            auto batch_pairs = sample_batch(participant_clips, batch, rng);
            std::vector<Tensor<S>> hs;
            hs.reserve(2 * batch);
            for (const auto& [a, b] : batch_pairs.pairs)
                for (size_t clip_id : {a, b}) {
                    const auto& clip = clips[clip_id];
                    auto mask = generate_mask(clip.n_frames, ctr_cfg.mask_rate, rng);
                    hs.push_back(encode(store, "enc.", enc_cfg, clip, mask, true, rng));
                }
            auto z = project(store, "proj.", stack_rows(hs));
            auto loss = contrastive_loss<S>(z, ctr_cfg.metric, ctr_cfg.temperature,
                                            ctr_cfg.metric == SimilarityKind::kBilinear ? &w_s
                                                                                        : nullptr);
            const double loss_v = loss.item();
            loss.backward();
            opt.step();
            ++step;
            epoch_loss += loss_v;
            if (step == 1) result.first_loss = loss_v;
            result.final_loss = loss_v;
            PretrainStepLog entry{step, loss_v, opt.lr()};
            result.log.push_back(entry);
            if (on_step) on_step(entry);
        }
        opt.plateau_decay(epoch_loss / steps_per_epoch);
    }
    return result;
}

}  // namespace respira
