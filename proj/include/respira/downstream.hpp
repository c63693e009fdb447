// Phase 2: supervised cough classification on top of the (optionally
// transferred) encoder. Single-branch head is sigmoid(w.h + b); the ensemble
// runs two encoder branches with independent masks and concatenates their
// representations (branch 1 then branch 2) before one sigmoid over 2d inputs.
// Training minimizes binary cross-entropy; validation loss drives plateau
// decay and the best-validation weights are retained.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "respira/contrastive.hpp"
#include "respira/encoder.hpp"
#include "respira/errors.hpp"
#include "respira/masking.hpp"
#include "respira/optim.hpp"
#include "respira/serialize.hpp"
#include "respira/tensor.hpp"

namespace respira {

enum class DownstreamArch { kSingle, kEnsemble };

inline const char* arch_name(DownstreamArch a) {
    return a == DownstreamArch::kSingle ? "single" : "ensemble";
}

struct DownstreamConfig {
    DownstreamArch arch = DownstreamArch::kSingle;
    double mask_rate = 0.0;      // fresh masks per clip per branch, also at test time
    bool freeze_encoder = false;
    double threshold = 0.5;
    int batch = 128;
    int epochs = 100;
    int early_stop_patience = 15;
    double pos_weight = 1.0;     // optional positive-class BCE weight, 1 = off
    double label_fraction = 1.0; // labeled-budget: fraction of train participants used

    void validate() const {
        if (threshold <= 0.0 || threshold >= 1.0)
            throw InvalidConfig("decision threshold must be in (0,1)");
        if (mask_rate < 0.0 || mask_rate > 1.0)
            throw InvalidConfig("downstream mask rate must be in [0,1]");
        if (batch < 1 || epochs < 0) throw InvalidConfig("bad downstream batch/epochs");
        if (pos_weight <= 0.0) throw InvalidConfig("pos_weight must be positive");
        if (label_fraction <= 0.0 || label_fraction > 1.0)
            throw InvalidConfig("label_fraction must be in (0,1]");
    }
};

template <typename S>
struct DownstreamModel {
    EncoderConfig encoder;
    DownstreamConfig cfg;
    ParameterStore<S> params;  // enc1.*, [enc2.*], head.w, head.b

    size_t head_width() const {
        return static_cast<size_t>(encoder.d_model) *
               (cfg.arch == DownstreamArch::kEnsemble ? 2 : 1);
    }
    std::vector<std::string> branch_prefixes() const {
        return cfg.arch == DownstreamArch::kEnsemble
                   ? std::vector<std::string>{"enc1.", "enc2."}
                   : std::vector<std::string>{"enc1."};
    }
};

/// Fresh downstream model. When `transfer` is given, every branch is
/// initialized with the same pre-trained encoder weights; the file's config
/// hash must match the requested encoder architecture.
template <typename S>
DownstreamModel<S> init_downstream_model(const EncoderConfig& enc_cfg,
                                         const DownstreamConfig& ds_cfg, Rng& rng,
                                         const WeightFile* transfer = nullptr) {
    enc_cfg.validate();
    ds_cfg.validate();
    DownstreamModel<S> model{enc_cfg, ds_cfg, {}};
    for (const auto& prefix : model.branch_prefixes())
        init_encoder_params(model.params, prefix, enc_cfg, rng);
    const size_t width = model.head_width();
    model.params.create("head.w", {width},
                        xavier_uniform<S>(width, 1, width, rng));
    model.params.create("head.b", {1}, std::vector<S>(1, S(0)));
    model.params.config_hash = enc_cfg.hash();
    model.params.phase_tag = "downstream";
    if (transfer != nullptr) {
        if (transfer->config_hash != enc_cfg.hash())
            throw ConfigMismatch(
                "pre-trained weights were saved for a different encoder configuration "
                "(file: " + transfer->config_text + "; requested: " + enc_cfg.canonical() + ")");
        for (const auto& prefix : model.branch_prefixes())
            load_into_store(*transfer, model.params, "enc.", prefix);
    }
    return model;
}

template <typename S>
Tensor<S> head_logit(const DownstreamModel<S>& model, const Tensor<S>& features,
                     bool frozen_head = false) {
    auto w = model.params.get("head.w");
    auto b = model.params.get("head.b");
    if (frozen_head) {
        w = stop_grad(w);
        b = stop_grad(b);
    }
    return add(dot(w, features), reshape(b, {}));
}

/// Concatenated branch representations for one clip (the model's feature
/// vector). Each branch draws its own mask at the configured downstream rate.
template <typename S>
Tensor<S> branch_features(const DownstreamModel<S>& model, const MelClip& clip, Rng& rng,
                          bool train) {
    const bool frozen = model.cfg.freeze_encoder;
    std::vector<Tensor<S>> hs;
    for (const auto& prefix : model.branch_prefixes()) {
        auto mask = generate_mask(clip.n_frames, model.cfg.mask_rate, rng);
        // frozen encoders run in eval mode: nothing behind them trains
        const bool branch_train = train && !frozen;
        hs.push_back(encode(model.params, prefix, model.encoder, clip, mask, branch_train,
                            rng, frozen));
    }
    return hs.size() == 1 ? hs[0] : concat(hs, 0);
}

template <typename S>
Tensor<S> predict_logit(const DownstreamModel<S>& model, const MelClip& clip, Rng& rng,
                        bool train) {
    return head_logit(model, branch_features(model, clip, rng, train));
}

/// COVID-positive probability for one clip, in (0,1). Masks are sampled at
/// the configured downstream rate; rate 0 makes prediction deterministic.
/// Saturated logits are clamped just inside the open interval.
template <typename S>
double predict(const DownstreamModel<S>& model, const MelClip& clip, Rng& rng,
               bool train = false) {
    const double z = static_cast<double>(predict_logit(model, clip, rng, train).item());
    const double p = 1.0 / (1.0 + std::exp(-z));
    return std::min(1.0 - 1e-12, std::max(1e-12, p));
}

/// Participant-level probability from that participant's clip probabilities.
inline double aggregate_participant(const std::vector<double>& clip_probs,
                                    const std::string& method = "mean") {
    if (clip_probs.empty()) throw EmptyList("no clip probabilities to aggregate");
    if (method == "max") return *std::max_element(clip_probs.begin(), clip_probs.end());
    if (method != "mean") throw InvalidConfig("unknown aggregation '" + method + "'");
    double acc = 0;
    for (double p : clip_probs) acc += p;
    return acc / static_cast<double>(clip_probs.size());
}

struct FinetuneResult {
    double best_val_loss = 0.0;
    int best_epoch = -1;
    int epochs_run = 0;
    std::vector<std::pair<double, double>> epoch_log;  // (train loss, val loss)
};

namespace detail {

// weighted BCE-with-logits, mean over the batch: pos examples weighted by pw
template <typename S>
Tensor<S> bce_loss(const Tensor<S>& logits, const std::vector<S>& labels, double pw) {
    const size_t n = labels.size();
    auto y = Tensor<S>::from_values({n}, labels);
    auto per = sub(softplus(logits), mul(logits, y));
    if (pw != 1.0) {
        std::vector<S> w(n);
        for (size_t i = 0; i < n; ++i) w[i] = labels[i] > S(0.5) ? static_cast<S>(pw) : S(1);
        per = mul(per, Tensor<S>::from_values({n}, w));
    }
    return mean_all(per);
}

template <typename S>
std::map<std::string, std::vector<S>> snapshot_values(const ParameterStore<S>& store) {
    std::map<std::string, std::vector<S>> snap;
    for (const auto& [name, t] : store.entries())
        snap.emplace(name, std::vector<S>(t.values().begin(), t.values().end()));
    return snap;
}

template <typename S>
void restore_values(ParameterStore<S>& store, const std::map<std::string, std::vector<S>>& snap) {
    for (const auto& [name, vals] : snap) store.get(name).mutable_values() = vals;
}

}  // namespace detail

/// Mean BCE of the model over a clip set, eval mode (no dropout; masks still
/// sampled at the downstream rate).
template <typename S>
double evaluate_loss(const DownstreamModel<S>& model, const std::vector<MelClip>& clips,
                     const std::vector<size_t>& ids, Rng& rng) {
    if (ids.empty()) throw EmptySplit("no clips to evaluate");
    double total = 0.0;
    for (size_t id : ids) {
        if (!clips[id].label) throw InvalidConfig("clip without label in a labeled split");
        auto z = predict_logit(model, clips[id], rng, false);
        std::vector<S> y{static_cast<S>(*clips[id].label)};
        total += static_cast<double>(detail::bce_loss(z, y, model.cfg.pos_weight).item());
    }
    return total / static_cast<double>(ids.size());
}

/// Fine-tunes (or trains from scratch) on labeled clips. Under
/// freeze_encoder only head parameters are updated and the encoder gradient
/// accumulators stay zero. With a frozen encoder and mask rate 0 the branch
/// features are deterministic, so they are computed once and reused.
template <typename S>
FinetuneResult finetune(DownstreamModel<S>& model, const std::vector<MelClip>& clips,
                        const std::vector<size_t>& train_ids,
                        const std::vector<size_t>& val_ids, const AdamConfig& opt_cfg,
                        Rng& rng,
                        const std::function<void(int, double, double, double)>& on_epoch = {}) {
    model.cfg.validate();
    if (train_ids.empty()) throw EmptySplit("empty train split");
    if (val_ids.empty()) throw EmptySplit("empty val split");
    for (size_t id : train_ids)
        if (!clips[id].label) throw InvalidConfig("unlabeled clip in the train split");

    std::vector<Tensor<S>> trainable;
    if (model.cfg.freeze_encoder) {
        trainable.push_back(model.params.get("head.w"));
        trainable.push_back(model.params.get("head.b"));
    } else {
        for (const auto& [name, t] : model.params.entries()) trainable.push_back(t);
    }
    Adam<S> opt(trainable, opt_cfg);

    const bool cache_features = model.cfg.freeze_encoder && model.cfg.mask_rate == 0.0;
    std::map<size_t, Tensor<S>> feature_cache;
    auto features_for = [&](size_t id, bool train) {
        if (!cache_features) return branch_features<S>(model, clips[id], rng, train);
        auto it = feature_cache.find(id);
        if (it == feature_cache.end()) {
            auto f = branch_features<S>(model, clips[id], rng, false);
            it = feature_cache.emplace(id, Tensor<S>::from_values(
                                               f.shape(), std::vector<S>(f.values().begin(),
                                                                         f.values().end())))
                     .first;
        }
        return it->second;
    };

    FinetuneResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::map<std::string, std::vector<S>> best_snapshot;
    int stale_epochs = 0;

    std::vector<size_t> order(train_ids);
    for (int epoch = 0; epoch < model.cfg.epochs; ++epoch) {
        // deterministic shuffle from the run rng
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        double train_loss = 0.0;
        size_t steps = 0;
        for (size_t start = 0; start < order.size(); start += model.cfg.batch) {
            const size_t stop = std::min(order.size(), start + model.cfg.batch);
            std::vector<Tensor<S>> logits;
            std::vector<S> labels;
            logits.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) {
                const size_t id = order[i];
                logits.push_back(reshape(head_logit(model, features_for(id, true)), {1}));
                labels.push_back(static_cast<S>(*clips[id].label));
            }
            auto loss = detail::bce_loss(concat(logits, 0), labels, model.cfg.pos_weight);
            const double loss_v = loss.item();
            loss.backward();
            opt.step();
            train_loss += loss_v;
            ++steps;
        }
        train_loss /= static_cast<double>(steps);

        double val_loss;
        if (cache_features) {
            val_loss = 0.0;
            for (size_t id : val_ids) {
                auto z = head_logit(model, features_for(id, false), /*frozen_head=*/true);
                std::vector<S> y{static_cast<S>(*clips[id].label)};
                val_loss += static_cast<double>(detail::bce_loss(z, y, model.cfg.pos_weight).item());
            }
            val_loss /= static_cast<double>(val_ids.size());
        } else {
            val_loss = evaluate_loss(model, clips, val_ids, rng);
        }
        opt.plateau_decay(val_loss);
        result.epoch_log.emplace_back(train_loss, val_loss);
        result.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(epoch, train_loss, val_loss, opt.lr());

        if (val_loss < best_val) {
            best_val = val_loss;
            result.best_epoch = epoch;
            best_snapshot = detail::snapshot_values(model.params);
            stale_epochs = 0;
        } else if (++stale_epochs >= model.cfg.early_stop_patience) {
            break;
        }
    }
    if (!best_snapshot.empty()) detail::restore_values(model.params, best_snapshot);
    result.best_val_loss = best_val;
    return result;
}

/// Head-only logistic training on fixed representation vectors. This is the
/// same machinery the frozen fast path uses; exposed for direct testing and
/// reuse.
template <typename S>
double train_head_on_representations(Tensor<S> w, Tensor<S> b,
                                     const std::vector<std::vector<S>>& reps,
                                     const std::vector<int>& labels, int epochs,
                                     const AdamConfig& opt_cfg) {
    if (reps.empty() || reps.size() != labels.size())
        throw ShapeMismatch("representations and labels disagree");
    Adam<S> opt({w, b}, opt_cfg);
    double last = 0.0;
    for (int e = 0; e < epochs; ++e) {
        std::vector<Tensor<S>> logits;
        std::vector<S> y;
        for (size_t i = 0; i < reps.size(); ++i) {
            auto h = Tensor<S>::from_values({reps[i].size()}, reps[i]);
            logits.push_back(reshape(add(dot(w, h), reshape(b, {})), {1}));
            y.push_back(static_cast<S>(labels[i]));
        }
        auto loss = detail::bce_loss(concat(logits, 0), y, 1.0);
        last = loss.item();
        loss.backward();
        opt.step();
    }
    return last;
}

// --- model file -------------------------------------------------------------

template <typename S>
std::string downstream_config_text(const DownstreamModel<S>& model) {
    std::ostringstream os;
    os << "encoder{" << model.encoder.canonical() << "};downstream{arch="
       << arch_name(model.cfg.arch) << ";mask_rate=" << model.cfg.mask_rate
       << ";threshold=" << model.cfg.threshold << "}";
    return os.str();
}

template <typename S>
void save_downstream_model(const DownstreamModel<S>& model, const std::string& path) {
    save_store(model.params, path, downstream_config_text(model));
}

/// Loads a model file. Architecture and encoder configuration come from the
/// caller and are validated against the stored config hash.
template <typename S>
DownstreamModel<S> load_downstream_model(const std::string& path,
                                         const EncoderConfig& enc_cfg,
                                         const DownstreamConfig& ds_cfg) {
    auto wf = load_weight_file(path);
    if (wf.config_hash != enc_cfg.hash())
        throw ConfigMismatch("model file " + path + " holds a different encoder configuration (" +
                             wf.config_text + ")");
    const bool has_second = wf.tensors.count("enc2.in.w") || wf.tensors.count("enc2.gru.wz");
    if ((ds_cfg.arch == DownstreamArch::kEnsemble) != has_second)
        throw ConfigMismatch("model file arch does not match the requested architecture");
    Rng rng(0);
    DownstreamModel<S> model = init_downstream_model<S>(enc_cfg, ds_cfg, rng);
    for (const auto& prefix : model.branch_prefixes())
        load_into_store(wf, model.params, prefix, prefix);
    load_into_store(wf, model.params, "head.", "head.");
    return model;
}

}  // namespace respira
