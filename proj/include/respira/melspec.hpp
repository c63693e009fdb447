// Log-compressed mel-filterbank features and fixed-length clip extraction.
//
// Framing: 25 ms Hann-windowed frames every 10 ms by default, so the default
// 96-frame window spans 960 ms. 64 triangular filters are laid out evenly on
// the mel scale between 60 Hz and Nyquist, peak 1, evaluated on the FFT grid;
// energies are log(x + 1e-6) compressed.
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "respira/audio.hpp"
#include "respira/errors.hpp"

namespace respira {

struct FeatureConfig {
    int sample_rate = 16000;
    double frame_ms = 25.0;
    double hop_ms = 10.0;
    int n_bins = 64;
    double fmin_hz = 60.0;
    double fmax_hz = 0.0;  // 0 = Nyquist
    double log_eps = 1e-6;
    int window_frames = 96;  // clip length T_w
    int clip_stride = 48;    // default T_w/2

    size_t frame_len() const {
        return static_cast<size_t>(std::lround(sample_rate * frame_ms / 1000.0));
    }
    size_t hop_len() const {
        return static_cast<size_t>(std::lround(sample_rate * hop_ms / 1000.0));
    }
    double resolved_fmax() const { return fmax_hz > 0.0 ? fmax_hz : sample_rate / 2.0; }
};

struct MelSpectrogram {
    size_t n_bins = 0;
    size_t n_frames = 0;
    double frame_hop_ms = 0.0;
    std::vector<float> values;  // row-major, n_bins x n_frames

    float at(size_t bin, size_t frame) const { return values[bin * n_frames + frame]; }
};

enum class Split { kTrain, kVal, kTest, kUnlabeled };

struct MelClip {
    size_t n_bins = 0;
    size_t n_frames = 0;  // exactly T_w
    std::vector<float> values;  // row-major, n_bins x n_frames
    std::string participant_id;
    std::string source_id;
    std::optional<int> label;  // absent in pre-training usage

    float at(size_t bin, size_t frame) const { return values[bin * n_frames + frame]; }
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

namespace detail {

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// iterative radix-2 complex FFT, in place
inline void fft(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace detail

/// Mel points (n_bins + 2 of them) between fmin and fmax, in Hz.
inline std::vector<double> mel_points_hz(const FeatureConfig& cfg) {
    const double mlo = hz_to_mel(cfg.fmin_hz);
    const double mhi = hz_to_mel(cfg.resolved_fmax());
    std::vector<double> pts(cfg.n_bins + 2);
    for (int i = 0; i < cfg.n_bins + 2; ++i)
        pts[i] = mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_bins + 1));
    return pts;
}

/// Center frequency of mel bin k (peak of its triangle).
inline double mel_bin_center_hz(const FeatureConfig& cfg, int k) {
    return mel_points_hz(cfg)[k + 1];
}

/// Triangular weight of filter m at frequency f, peak 1 at the bin center.
inline double mel_triangle_weight(const std::vector<double>& pts, int m, double f) {
    const double lo = pts[m], mid = pts[m + 1], hi = pts[m + 2];
    if (f <= lo || f >= hi) return 0.0;
    return f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
}

inline void validate_feature_config(const FeatureConfig& cfg) {
    if (cfg.sample_rate <= 0) throw InvalidConfig("sample_rate must be positive");
    if (cfg.n_bins < 1) throw InvalidConfig("n_bins must be >= 1");
    if (cfg.fmin_hz < 0 || cfg.fmin_hz >= cfg.resolved_fmax())
        throw InvalidConfig("mel range is empty");
    if (cfg.resolved_fmax() > cfg.sample_rate / 2.0)
        throw InvalidConfig("mel range exceeds Nyquist");
    if (cfg.frame_len() == 0 || cfg.hop_len() == 0)
        throw InvalidConfig("frame or hop length rounds to zero samples");
}

/// Log-mel filterbank matrix of an audio buffer. The frame count is
/// floor((len - frame_len)/hop) + 1; audio shorter than one frame is an error.
inline MelSpectrogram compute_logmel(const RawAudio& audio, const FeatureConfig& cfg) {
    validate_feature_config(cfg);
    const size_t frame_len = cfg.frame_len();
    const size_t hop = cfg.hop_len();
    if (audio.samples.size() < frame_len)
        throw AudioTooShort(audio.source_id + ": " + std::to_string(audio.samples.size()) +
                            " samples < one frame (" + std::to_string(frame_len) + ")");

    const size_t n_frames = (audio.samples.size() - frame_len) / hop + 1;
    const size_t nfft = detail::next_pow2(frame_len);
    const size_t n_freq = nfft / 2 + 1;

    std::vector<double> window(frame_len);
    for (size_t i = 0; i < frame_len; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (frame_len - 1));

    // sparse triangles evaluated on the FFT grid
    const auto pts = mel_points_hz(cfg);
    const double hz_per_fft_bin = static_cast<double>(cfg.sample_rate) / nfft;
    std::vector<std::vector<std::pair<size_t, double>>> filters(cfg.n_bins);
    for (int m = 0; m < cfg.n_bins; ++m)
        for (size_t k = 0; k < n_freq; ++k) {
            const double w = mel_triangle_weight(pts, m, k * hz_per_fft_bin);
            if (w > 0.0) filters[m].push_back({k, w});
        }

    MelSpectrogram spec;
    spec.n_bins = static_cast<size_t>(cfg.n_bins);
    spec.n_frames = n_frames;
    spec.frame_hop_ms = cfg.hop_ms;
    spec.values.resize(spec.n_bins * n_frames);

    std::vector<std::complex<double>> buf(nfft);
    std::vector<double> power(n_freq);
    for (size_t t = 0; t < n_frames; ++t) {
        const float* frame = audio.samples.data() + t * hop;
        for (size_t i = 0; i < frame_len; ++i) buf[i] = frame[i] * window[i];
        for (size_t i = frame_len; i < nfft; ++i) buf[i] = 0.0;
        detail::fft(buf);
        for (size_t k = 0; k < n_freq; ++k) power[k] = std::norm(buf[k]);
        for (int m = 0; m < cfg.n_bins; ++m) {
            double e = 0.0;
            for (const auto& [k, w] : filters[m]) e += w * power[k];
            spec.values[m * n_frames + t] = static_cast<float>(std::log(e + cfg.log_eps));
        }
    }
    return spec;
}

/// Cuts a spectrogram into clips of exactly `window` frames starting at
/// 0, stride, 2*stride, ... Spectrograms shorter than the window yield no
/// clips (no padding).
inline std::vector<MelClip> extract_clips(const MelSpectrogram& spec, size_t window,
                                          size_t stride, const std::string& participant_id,
                                          const std::string& source_id,
                                          std::optional<int> label = std::nullopt) {
    if (window < 1 || stride < 1) throw InvalidConfig("clip window and stride must be >= 1");
    std::vector<MelClip> clips;
    if (spec.n_frames < window) return clips;
    for (size_t start = 0; start + window <= spec.n_frames; start += stride) {
        MelClip c;
        c.n_bins = spec.n_bins;
        c.n_frames = window;
        c.participant_id = participant_id;
        c.source_id = source_id;
        c.label = label;
        c.values.resize(spec.n_bins * window);
        for (size_t b = 0; b < spec.n_bins; ++b)
            for (size_t t = 0; t < window; ++t)
                c.values[b * window + t] = spec.at(b, start + t);
        clips.push_back(std::move(c));
    }
    return clips;
}

}  // namespace respira
