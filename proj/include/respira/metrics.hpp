// Binary-classifier evaluation. ROC-AUC is computed by the rank statistic
// (ties count half), which matches brute-force pairwise counting exactly and
// needs no curve integration. "Average F1" follows the reporting convention
// of harmonically combining the run-averaged precision and recall, not the
// mean of per-run F1 scores.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "respira/errors.hpp"

namespace respira {

struct EvalReport {
    std::optional<double> roc_auc;  // absent for single-class inputs
    double recall = 0.0;
    double precision = 0.0;
    double accuracy = 0.0;
    double average_f1 = 0.0;
    size_t n_pos = 0;
    size_t n_neg = 0;
    uint64_t run_seed = 0;
};

/// Harmonic mean of (possibly run-averaged) precision and recall.
inline double average_f1(double precision, double recall) {
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

/// Rank-statistic ROC-AUC over (score, label) pairs. Exact including ties:
/// the numerator is accumulated in integers (doubled average ranks).
inline double roc_auc_rank(std::vector<std::pair<double, int>> scores) {
    size_t n_pos = 0;
    for (const auto& [s, y] : scores) n_pos += y != 0;
    const size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw InvalidConfig("ROC-AUC needs both classes");
    std::sort(scores.begin(), scores.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    unsigned long long doubled_pos_rank = 0;
    size_t i = 0;
    while (i < scores.size()) {
        size_t j = i;
        while (j + 1 < scores.size() && scores[j + 1].first == scores[i].first) ++j;
        const unsigned long long doubled_avg_rank = (i + 1) + (j + 1);  // 2 * mean rank
        for (size_t k = i; k <= j; ++k)
            if (scores[k].second != 0) doubled_pos_rank += doubled_avg_rank;
        i = j + 1;
    }
    const unsigned long long numerator =
        doubled_pos_rank - static_cast<unsigned long long>(n_pos) * (n_pos + 1);
    return static_cast<double>(numerator) / (2.0 * static_cast<double>(n_pos) * n_neg);
}

/// Threshold metrics plus rank ROC-AUC. Single-class inputs report the AUC
/// as absent and still fill the rest.
inline EvalReport compute_metrics(const std::vector<std::pair<double, int>>& scores,
                                  double threshold) {
    if (scores.empty()) throw EmptyList("no scores to evaluate");
    EvalReport r;
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& [p, y] : scores) {
        const bool decision = p > threshold;
        if (y != 0) {
            ++r.n_pos;
            decision ? ++tp : ++fn;
        } else {
            ++r.n_neg;
            decision ? ++fp : ++tn;
        }
    }
    r.recall = r.n_pos ? static_cast<double>(tp) / r.n_pos : 0.0;
    r.precision = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    r.accuracy = static_cast<double>(tp + tn) / scores.size();
    r.average_f1 = average_f1(r.precision, r.recall);
    if (r.n_pos > 0 && r.n_neg > 0) r.roc_auc = roc_auc_rank(scores);
    return r;
}

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// Flat key=value block (one metric per line).
inline std::string report_to_kv(const EvalReport& r) {
    std::string out;
    out += "roc_auc=" + (r.roc_auc ? format_metric(*r.roc_auc) : std::string("absent")) + "\n";
    out += "recall=" + format_metric(r.recall) + "\n";
    out += "precision=" + format_metric(r.precision) + "\n";
    out += "accuracy=" + format_metric(r.accuracy) + "\n";
    out += "average_f1=" + format_metric(r.average_f1) + "\n";
    out += "n_pos=" + std::to_string(r.n_pos) + "\n";
    out += "n_neg=" + std::to_string(r.n_neg) + "\n";
    out += "run_seed=" + std::to_string(r.run_seed) + "\n";
    return out;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    if (r.roc_auc)
        j["roc_auc"] = *r.roc_auc;
    else
        j["roc_auc"] = nullptr;
    j["recall"] = r.recall;
    j["precision"] = r.precision;
    j["accuracy"] = r.accuracy;
    j["average_f1"] = r.average_f1;
    j["n_pos"] = r.n_pos;
    j["n_neg"] = r.n_neg;
    j["run_seed"] = r.run_seed;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    if (!j.at("roc_auc").is_null()) r.roc_auc = j.at("roc_auc").get<double>();
    r.recall = j.at("recall").get<double>();
    r.precision = j.at("precision").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.average_f1 = j.at("average_f1").get<double>();
    r.n_pos = j.at("n_pos").get<size_t>();
    r.n_neg = j.at("n_neg").get<size_t>();
    r.run_seed = j.at("run_seed").get<uint64_t>();
    return r;
}

}  // namespace respira
