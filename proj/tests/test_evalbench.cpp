#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "respira/benchmark.hpp"
#include "respira/dataset.hpp"
#include "respira/metrics.hpp"
#include "respira/rng.hpp"
#include "respira/synth.hpp"

using respira::EvalReport;
using respira::FeatureConfig;
using respira::Rng;
using respira::Split;

namespace {

// brute-force pairwise win rate: wins + half-credit ties over all pos-neg pairs
double auc_oracle(const std::vector<std::pair<double, int>>& scores) {
    unsigned long long wins2 = 0, pairs = 0;
    for (const auto& [sp, yp] : scores) {
        if (!yp) continue;
        for (const auto& [sn, yn] : scores) {
            if (yn) continue;
            ++pairs;
            if (sp > sn)
                wins2 += 2;
            else if (sp == sn)
                wins2 += 1;
        }
    }
    return static_cast<double>(wins2) / (2.0 * static_cast<double>(pairs));
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("roc-auc and threshold metrics") {
    SECTION("perfect separation scores 1.0") {
        std::vector<std::pair<double, int>> s{{0.9, 1}, {0.8, 1}, {0.3, 0}, {0.1, 0}};
        auto r = respira::compute_metrics(s, 0.5);
        REQUIRE(r.roc_auc);
        REQUIRE(*r.roc_auc == 1.0);
    }
    SECTION("worked 2x2 example: AUC 0.75, everything else one half") {
        // pos-neg pairs: (.9,.6) win, (.9,.1) win, (.4,.6) loss, (.4,.1) win -> 3/4
        std::vector<std::pair<double, int>> s{{0.9, 1}, {0.4, 1}, {0.6, 0}, {0.1, 0}};
        auto r = respira::compute_metrics(s, 0.5);
        REQUIRE(*r.roc_auc == 0.75);
        REQUIRE(r.recall == 0.5);
        REQUIRE(r.precision == 0.5);
        REQUIRE(r.accuracy == 0.5);
        REQUIRE(r.n_pos == 2);
        REQUIRE(r.n_neg == 2);
    }
    SECTION("rank statistic matches the pairwise oracle exactly, ties included") {
        Rng rng(1);
        for (int trial = 0; trial < 300; ++trial) {
            const size_t n = 2 + rng.uniform_int(199);
            std::vector<std::pair<double, int>> s;
            bool has_pos = false, has_neg = false;
            for (size_t i = 0; i < n; ++i) {
                // coarse score grid forces plenty of ties
                const double score = rng.uniform_int(20) / 19.0;
                const int y = rng.uniform() < 0.4 ? 1 : 0;
                has_pos |= y == 1;
                has_neg |= y == 0;
                s.push_back({score, y});
            }
            if (!has_pos || !has_neg) continue;
            REQUIRE(respira::roc_auc_rank(s) == auc_oracle(s));
        }
    }
    SECTION("reported-average-F1 convention reproduces 77.27 from (81.99, 73.07)") {
        REQUIRE(respira::average_f1(81.99, 73.07) == Catch::Approx(77.27).margin(0.01));
    }
    SECTION("single-class input reports no AUC but keeps the rest") {
        std::vector<std::pair<double, int>> s{{0.9, 1}, {0.2, 1}};
        auto r = respira::compute_metrics(s, 0.5);
        REQUIRE_FALSE(r.roc_auc);
        REQUIRE(r.recall == 0.5);
        REQUIRE(r.accuracy == 0.5);
    }
    SECTION("json round trip") {
        std::vector<std::pair<double, int>> s{{0.9, 1}, {0.4, 1}, {0.6, 0}, {0.1, 0}};
        auto r = respira::compute_metrics(s, 0.5);
        r.run_seed = 17;
        auto back = respira::report_from_json(respira::report_to_json(r));
        REQUIRE(back.roc_auc == r.roc_auc);
        REQUIRE(back.average_f1 == r.average_f1);
        REQUIRE(back.run_seed == 17);
    }
}

TEST_CASE("latency benchmark") {
    SECTION("zero trials is an error") {
        REQUIRE_THROWS_AS(respira::benchmark_inference([] {}, 0), respira::EmptyBenchmark);
    }
    SECTION("repeated measurement of the same call stays within sanity bounds") {
        auto work = [] {
            volatile double acc = 0;
            for (int i = 0; i < 20000; ++i) acc += i * 0.5;
        };
        auto a = respira::benchmark_inference(work, 50);
        auto b = respira::benchmark_inference(work, 50);
        REQUIRE(a.trials == 50);
        REQUIRE(a.p50_s > 0.0);
        REQUIRE(a.p95_s >= a.p50_s);
        REQUIRE(a.p50_s < 3.0 * b.p50_s);
        REQUIRE(b.p50_s < 3.0 * a.p50_s);
    }
}

TEST_CASE("synthetic corpus") {
    namespace fs = std::filesystem;
    FeatureConfig feat;

    SECTION("same spec and seed is byte-identical; counts line up") {
        respira::SyntheticCorpusSpec spec;
        spec.n_participants = 20;
        spec.clips_per_participant = 10;
        spec.seed = 5;
        const auto dir_a = fs::temp_directory_path() / "respira_synth_a";
        const auto dir_b = fs::temp_directory_path() / "respira_synth_b";
        fs::remove_all(dir_a);
        fs::remove_all(dir_b);
        auto mf_a = respira::generate_synthetic_corpus(spec, feat, dir_a.string());
        auto mf_b = respira::generate_synthetic_corpus(spec, feat, dir_b.string());

        REQUIRE(mf_a.entries.size() == 200);
        std::set<std::string> pids;
        for (const auto& e : mf_a.entries) pids.insert(e.participant_id);
        REQUIRE(pids.size() == 20);

        REQUIRE(file_bytes(dir_a / "manifest.tsv") == file_bytes(dir_b / "manifest.tsv"));
        for (const auto& e : mf_a.entries)
            REQUIRE(file_bytes(dir_a / e.file_path) == file_bytes(dir_b / e.file_path));
        fs::remove_all(dir_a);
        fs::remove_all(dir_b);
    }

    SECTION("noise-free single signature bin dominates the log-mel energy") {
        respira::SyntheticCorpusSpec spec;
        spec.n_participants = 3;
        spec.clips_per_participant = 2;
        spec.signature_bins_per_participant = 1;
        spec.noise_level = 0.0;
        spec.label_effect = 0.0;
        spec.positive_fraction = 0.0;
        spec.seed = 6;
        const auto dir = fs::temp_directory_path() / "respira_synth_c";
        fs::remove_all(dir);
        auto mf = respira::generate_synthetic_corpus(spec, feat, dir.string());
        auto store = respira::load_clips(mf, dir.string(), feat);
        REQUIRE_FALSE(store.clips.empty());
        const auto [lo, hi] = respira::synth_signature_range(feat);
        for (const auto& clip : store.clips) {
            // every frame's argmax must sit at the participant's one bin
            size_t ref = 0;
            for (size_t b = 1; b < clip.n_bins; ++b)
                if (clip.at(b, 0) > clip.at(ref, 0)) ref = b;
            REQUIRE(ref >= static_cast<size_t>(lo));
            REQUIRE(ref < static_cast<size_t>(hi));
            for (size_t t = 1; t < clip.n_frames; ++t) {
                size_t am = 0;
                for (size_t b = 1; b < clip.n_bins; ++b)
                    if (clip.at(b, t) > clip.at(am, t)) am = b;
                REQUIRE(am == ref);
            }
        }
        fs::remove_all(dir);
    }

    SECTION("label effect well above noise admits >= 95% nearest-centroid accuracy") {
        respira::SyntheticCorpusSpec spec;
        spec.n_participants = 16;
        spec.clips_per_participant = 6;
        spec.noise_level = 0.02;
        spec.label_effect = 0.12;
        spec.seed = 7;
        const auto dir = fs::temp_directory_path() / "respira_synth_d";
        fs::remove_all(dir);
        auto mf = respira::generate_synthetic_corpus(spec, feat, dir.string());
        auto store = respira::load_clips(mf, dir.string(), feat);

        auto mean_logmel = [&](const respira::MelClip& c) {
            std::vector<double> m(c.n_bins, 0.0);
            for (size_t b = 0; b < c.n_bins; ++b) {
                for (size_t t = 0; t < c.n_frames; ++t) m[b] += c.at(b, t);
                m[b] /= static_cast<double>(c.n_frames);
            }
            return m;
        };
        std::vector<double> centroid[2];
        size_t counts[2] = {0, 0};
        centroid[0].assign(feat.n_bins, 0.0);
        centroid[1].assign(feat.n_bins, 0.0);
        for (size_t id : store.ids_in_split(Split::kTrain)) {
            const auto m = mean_logmel(store.clips[id]);
            const int y = *store.clips[id].label;
            for (int b = 0; b < feat.n_bins; ++b) centroid[y][b] += m[b];
            ++counts[y];
        }
        REQUIRE(counts[0] > 0);
        REQUIRE(counts[1] > 0);
        for (int y : {0, 1})
            for (int b = 0; b < feat.n_bins; ++b) centroid[y][b] /= counts[y];

        size_t correct = 0, total = 0;
        for (size_t id : store.ids_in_split(Split::kTest)) {
            const auto m = mean_logmel(store.clips[id]);
            double d2[2] = {0.0, 0.0};
            for (int y : {0, 1})
                for (int b = 0; b < feat.n_bins; ++b)
                    d2[y] += (m[b] - centroid[y][b]) * (m[b] - centroid[y][b]);
            const int pred = d2[1] < d2[0] ? 1 : 0;
            correct += pred == *store.clips[id].label;
            ++total;
        }
        REQUIRE(total > 0);
        REQUIRE(static_cast<double>(correct) / total >= 0.95);
        fs::remove_all(dir);
    }
}
