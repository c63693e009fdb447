// Parameter registry, Adam, and reduce-on-plateau learning-rate decay.
#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "respira/errors.hpp"
#include "respira/tensor.hpp"

namespace respira {

/// Named map of trainable tensors. Names are unique and every tensor requires
/// gradients. Readers may share a store for inference; updates need exclusive
/// access.
template <typename S>
class ParameterStore {
public:
    Tensor<S> create(const std::string& name, Shape shape, std::vector<S> values) {
        if (params_.count(name)) throw InvalidConfig("duplicate parameter name: " + name);
        Tensor<S> t = Tensor<S>::param(std::move(shape), std::move(values), name);
        params_.emplace(name, t);
        return t;
    }
    void put(const std::string& name, Tensor<S> t) {
        if (params_.count(name)) throw InvalidConfig("duplicate parameter name: " + name);
        if (!t.requires_grad()) throw InvalidConfig("store holds trainable tensors only: " + name);
        params_.emplace(name, std::move(t));
    }

    Tensor<S> get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw InvalidConfig("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    /// Name-ordered view; iteration order is part of determinism.
    const std::map<std::string, Tensor<S>>& entries() const { return params_; }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : params_)
            if (k.rfind(prefix, 0) == 0) out.push_back(k);
        return out;
    }

    void zero_grad() {
        for (auto& [k, v] : params_) v.zero_grad();
    }

    uint64_t config_hash = 0;   // creation config hash, embedded in checkpoints
    std::string phase_tag;      // "pretrain" | "downstream"

private:
    std::map<std::string, Tensor<S>> params_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // plateau decay: after `patience` epochs without val-metric improvement,
    // lr <- lr * factor
    double plateau_factor = 0.1;
    int plateau_patience = 5;
};

/// Adam over an explicit parameter list (a subset of a store when some
/// weights are frozen), with the plateau scheduler folded into its state.
template <typename S>
class Adam {
public:
    Adam(std::vector<Tensor<S>> params, AdamConfig cfg)
        : params_(std::move(params)), cfg_(cfg), lr_(cfg.lr) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), S(0));
            v_.emplace_back(p.numel(), S(0));
        }
    }

    /// One update. Every managed parameter must have a backward-populated
    /// gradient since the last step; gradients are zeroed afterwards.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.has_grad())
                throw MissingGradient(p.name().empty() ? "<unnamed>" : p.name());
            auto g = p.grad();
            auto& vals = p.mutable_values();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < vals.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                m[i] = static_cast<S>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
                v[i] = static_cast<S>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                vals[i] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
            p.zero_grad();
        }
    }

    /// Plateau decay. Call once per validation epoch with the monitored
    /// metric (lower is better).
    void plateau_decay(double val_metric) {
        if (val_metric < best_metric_) {
            best_metric_ = val_metric;
            plateau_counter_ = 0;
            return;
        }
        if (++plateau_counter_ >= cfg_.plateau_patience) {
            lr_ *= cfg_.plateau_factor;
            plateau_counter_ = 0;
        }
    }

    double lr() const { return lr_; }
    long step_count() const { return t_; }
    double best_metric() const { return best_metric_; }

private:
    std::vector<Tensor<S>> params_;
    AdamConfig cfg_;
    double lr_;
    long t_ = 0;
    std::vector<std::vector<S>> m_, v_;
    double best_metric_ = std::numeric_limits<double>::infinity();
    int plateau_counter_ = 0;
};

}  // namespace respira
