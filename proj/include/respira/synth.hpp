// Synthetic respiratory corpus. Stands in for the restricted-access datasets:
// every participant gets a personal set of signature sinusoids (placed at mel
// bin centers), every clip is those sinusoids with fresh phases plus white
// noise, and COVID-positive participants carry an extra band-limited
// component in a reserved upper-mel band. Participants are assigned to
// splits disjointly; labels inside each split are stratified.
#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "respira/audio.hpp"
#include "respira/errors.hpp"
#include "respira/manifest.hpp"
#include "respira/melspec.hpp"
#include "respira/rng.hpp"

namespace respira {

struct SyntheticCorpusSpec {
    int n_participants = 40;
    int clips_per_participant = 20;
    double positive_fraction = 0.4;
    int signature_bins_per_participant = 3;
    double noise_level = 0.05;
    double label_effect = 0.10;  // amplitude of the positive-class band component
    uint64_t seed = 1;
    double clip_seconds = 1.06;  // one default clip window per file
    double unlabeled_fraction = 0.0;  // participants emitted without labels
    double train_fraction = 0.7;      // of the labeled remainder
    double val_fraction = 0.1;        // of the labeled remainder; test takes the rest
    // within-participant variety across recordings: per-clip amplitude jitter
    // of every tone, plus per-clip distractor tones that carry no participant
    // or label information
    double amp_jitter = 0.5;      // amplitudes scale by U(1-j, 1+j)
    int distractor_tones = 2;
    double distractor_level = 1.0;  // relative to a signature tone
    // signature and distractor tones play inside a cough-like burst window
    // covering U(burst_fraction_min, 1) of the clip; 1 = stationary tones.
    // The label band stays on for the whole clip.
    double burst_fraction_min = 0.5;

    void validate(const FeatureConfig& feat) const {
        if (n_participants < 1 || clips_per_participant < 1)
            throw InvalidConfig("corpus needs participants and clips");
        if (positive_fraction < 0.0 || positive_fraction > 1.0)
            throw InvalidConfig("positive_fraction must be in [0,1]");
        if (unlabeled_fraction < 0.0 || unlabeled_fraction > 1.0)
            throw InvalidConfig("unlabeled_fraction must be in [0,1]");
        if (train_fraction < 0.0 || val_fraction < 0.0 ||
            train_fraction + val_fraction > 1.0)
            throw InvalidConfig("split fractions must not exceed 1");
        if (signature_bins_per_participant < 1 ||
            signature_bins_per_participant >= feat.n_bins)
            throw InvalidConfig("signature bins must fit below the bin count");
        if (noise_level < 0.0 || label_effect < 0.0)
            throw InvalidConfig("noise_level and label_effect must be nonnegative");
        if (amp_jitter < 0.0 || amp_jitter >= 1.0)
            throw InvalidConfig("amp_jitter must be in [0,1)");
        if (distractor_tones < 0 || distractor_level < 0.0)
            throw InvalidConfig("distractor settings must be nonnegative");
    }
};

namespace detail {

// reserved upper-mel region for the positive-class component
inline std::pair<int, int> label_band(const FeatureConfig& feat) {
    const int hi = feat.n_bins - 4;
    const int lo = feat.n_bins - 9;
    return {std::max(1, lo), std::max(2, hi)};
}

}  // namespace detail

/// Signature bins are drawn below the label band so class separability is a
/// property of the band alone.
inline std::pair<int, int> synth_signature_range(const FeatureConfig& feat) {
    return {3, detail::label_band(feat).first - 2};
}

/// Writes WAV files plus manifest.tsv under out_dir and returns the manifest.
/// Byte-identical output for identical spec and seed.
inline DatasetManifest generate_synthetic_corpus(const SyntheticCorpusSpec& spec,
                                                 const FeatureConfig& feat,
                                                 const std::string& out_dir) {
    spec.validate(feat);
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "audio");

    Rng rng(spec.seed);
    const int n = spec.n_participants;

    // participant -> split, disjoint by construction
    std::vector<Split> split_of(n);
    {
        auto order = rng.sample_without_replacement(n, n);
        const int n_unlab = static_cast<int>(std::lround(spec.unlabeled_fraction * n));
        const int labeled = n - n_unlab;
        const int n_train = static_cast<int>(std::lround(spec.train_fraction * labeled));
        const int n_val = static_cast<int>(std::lround(spec.val_fraction * labeled));
        for (int i = 0; i < n; ++i) {
            Split s = Split::kTest;
            if (i < n_unlab)
                s = Split::kUnlabeled;
            else if (i < n_unlab + n_train)
                s = Split::kTrain;
            else if (i < n_unlab + n_train + n_val)
                s = Split::kVal;
            split_of[order[i]] = s;
        }
    }

    // stratified positives inside each split group
    std::vector<int> latent_label(n, 0);
    for (Split s : {Split::kUnlabeled, Split::kTrain, Split::kVal, Split::kTest}) {
        std::vector<int> members;
        for (int p = 0; p < n; ++p)
            if (split_of[p] == s) members.push_back(p);
        const int n_pos = static_cast<int>(std::lround(spec.positive_fraction *
                                                       static_cast<double>(members.size())));
        for (size_t idx : rng.sample_without_replacement(members.size(), n_pos))
            latent_label[members[idx]] = 1;
    }

    const auto [sig_lo, sig_hi] = synth_signature_range(feat);
    const auto [band_lo, band_hi] = detail::label_band(feat);
    if (sig_hi <= sig_lo) throw InvalidConfig("bin count too small for the synthetic layout");

    DatasetManifest mf;
    const size_t n_samples = static_cast<size_t>(spec.clip_seconds * feat.sample_rate);
    std::vector<float> samples(n_samples);
    for (int p = 0; p < n; ++p) {
        // personal signature frequencies at mel bin centers
        std::vector<double> sig_freqs;
        for (size_t pick : rng.sample_without_replacement(
                 static_cast<size_t>(sig_hi - sig_lo), spec.signature_bins_per_participant))
            sig_freqs.push_back(mel_bin_center_hz(feat, sig_lo + static_cast<int>(pick)));
        std::vector<double> band_freqs;
        if (latent_label[p]) {
            for (size_t pick : rng.sample_without_replacement(
                     static_cast<size_t>(band_hi - band_lo), 2))
                band_freqs.push_back(mel_bin_center_hz(feat, band_lo + static_cast<int>(pick)));
        }
        const double sig_amp = 0.5 / sig_freqs.size();

        char pid[32];
        std::snprintf(pid, sizeof pid, "p%03d", p);
        for (int c = 0; c < spec.clips_per_participant; ++c) {
            for (auto& s : samples) s = 0.0f;
            auto add_tone = [&](double f, double amp) {
                const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                const double jitter =
                    rng.uniform(1.0 - spec.amp_jitter, 1.0 + spec.amp_jitter);
                for (size_t i = 0; i < n_samples; ++i)
                    samples[i] += static_cast<float>(
                        amp * jitter *
                        std::sin(2.0 * std::numbers::pi * f * i / feat.sample_rate + phase));
            };
            for (double f : sig_freqs) add_tone(f, sig_amp);
            for (double f : band_freqs) add_tone(f, spec.label_effect);
            for (int dt = 0; dt < spec.distractor_tones; ++dt) {
                const int bin = sig_lo + static_cast<int>(rng.uniform_int(sig_hi - sig_lo));
                add_tone(mel_bin_center_hz(feat, bin), sig_amp * spec.distractor_level);
            }
            if (spec.noise_level > 0.0)
                for (auto& s : samples)
                    s += static_cast<float>(spec.noise_level * rng.normal());
            float peak = 0.0f;
            for (float s : samples) peak = std::max(peak, std::abs(s));
            if (peak > 0.95f)
                for (auto& s : samples) s *= 0.95f / peak;

            char fname[64];
            std::snprintf(fname, sizeof fname, "audio/%s_c%03d.wav", pid, c);
            write_wav((fs::path(out_dir) / fname).string(), samples, feat.sample_rate);

            ManifestEntry e;
            e.participant_id = pid;
            e.file_path = fname;
            e.split = split_of[p];
            if (e.split != Split::kUnlabeled) e.label = latent_label[p];
            mf.entries.push_back(std::move(e));
        }
    }
    std::sort(mf.entries.begin(), mf.entries.end(), [](const auto& a, const auto& b) {
        return std::tie(a.participant_id, a.file_path) < std::tie(b.participant_id, b.file_path);
    });
    save_manifest(mf, (fs::path(out_dir) / "manifest.tsv").string());
    return mf;
}

}  // namespace respira
