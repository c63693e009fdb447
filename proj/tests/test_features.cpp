#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "respira/audio.hpp"
#include "respira/manifest.hpp"
#include "respira/melspec.hpp"
#include "respira/rng.hpp"

using respira::FeatureConfig;
using respira::RawAudio;
using respira::Rng;

namespace {

RawAudio sine(double freq, double seconds, int rate, double amplitude = 0.5) {
    RawAudio a;
    a.sample_rate = rate;
    a.source_id = "sine";
    const size_t n = static_cast<size_t>(seconds * rate);
    a.samples.resize(n);
    for (size_t i = 0; i < n; ++i)
        a.samples[i] = static_cast<float>(
            amplitude * std::sin(2.0 * std::numbers::pi * freq * i / rate));
    return a;
}

RawAudio noise(double seconds, int rate, uint64_t seed) {
    RawAudio a;
    a.sample_rate = rate;
    a.source_id = "noise";
    Rng rng(seed);
    a.samples.resize(static_cast<size_t>(seconds * rate));
    for (auto& s : a.samples) s = static_cast<float>(rng.uniform(-0.5, 0.5));
    return a;
}

}  // namespace

TEST_CASE("log-mel frame count follows the framing law") {
    FeatureConfig cfg;
    auto audio = noise(1.0, 16000, 1);
    auto spec = respira::compute_logmel(audio, cfg);
    REQUIRE(spec.n_bins == 64);
    REQUIRE(spec.n_frames == 98);

    // independent frame-iterator oracle
    size_t count = 0;
    for (size_t start = 0; start + cfg.frame_len() <= audio.samples.size();
         start += cfg.hop_len())
        ++count;
    REQUIRE(spec.n_frames == count);
}

TEST_CASE("silence maps to a constant log(eps) matrix") {
    FeatureConfig cfg;
    RawAudio a;
    a.sample_rate = 16000;
    a.source_id = "silence";
    a.samples.assign(16000, 0.0f);
    auto spec = respira::compute_logmel(a, cfg);
    const float expected = static_cast<float>(std::log(cfg.log_eps));
    for (float v : spec.values) REQUIRE(v == expected);
}

TEST_CASE("a sinusoid at a bin center peaks at that bin") {
    FeatureConfig cfg;
    const auto pts = respira::mel_points_hz(cfg);
    for (int k : {8, 20, 35, 50}) {
        const double f0 = respira::mel_bin_center_hz(cfg, k);

        // brute-force oracle: evaluate every triangle at f0 from scratch
        int oracle_argmax = 0;
        double best = -1.0;
        for (int m = 0; m < cfg.n_bins; ++m) {
            const double w = respira::mel_triangle_weight(pts, m, f0);
            if (w > best) {
                best = w;
                oracle_argmax = m;
            }
        }
        REQUIRE(oracle_argmax == k);

        auto spec = respira::compute_logmel(sine(f0, 0.5, cfg.sample_rate), cfg);
        const size_t mid = spec.n_frames / 2;
        size_t argmax = 0;
        for (size_t m = 1; m < spec.n_bins; ++m)
            if (spec.at(m, mid) > spec.at(argmax, mid)) argmax = m;
        REQUIRE(argmax == static_cast<size_t>(k));
    }
}

TEST_CASE("feature errors") {
    FeatureConfig cfg;
    SECTION("audio shorter than one frame") {
        RawAudio a;
        a.sample_rate = 16000;
        a.samples.assign(100, 0.1f);
        REQUIRE_THROWS_AS(respira::compute_logmel(a, cfg), respira::AudioTooShort);
    }
    SECTION("mel range beyond Nyquist") {
        cfg.fmax_hz = 9000.0;  // > 8 kHz Nyquist
        REQUIRE_THROWS_AS(respira::compute_logmel(noise(1.0, 16000, 2), cfg),
                          respira::InvalidConfig);
    }
}

TEST_CASE("log-mel determinism and gain monotonicity") {
    FeatureConfig cfg;
    auto audio = noise(0.8, 16000, 3);
    auto a = respira::compute_logmel(audio, cfg);
    auto b = respira::compute_logmel(audio, cfg);
    REQUIRE(a.values == b.values);

    auto louder = audio;
    for (auto& s : louder.samples) s *= 2.5f;
    auto c = respira::compute_logmel(louder, cfg);
    for (size_t i = 0; i < a.values.size(); ++i) REQUIRE(c.values[i] >= a.values[i]);
}

TEST_CASE("clip extraction") {
    auto make_spec = [](size_t frames) {
        respira::MelSpectrogram s;
        s.n_bins = 4;
        s.n_frames = frames;
        s.values.resize(4 * frames);
        for (size_t i = 0; i < s.values.size(); ++i) s.values[i] = static_cast<float>(i);
        return s;
    };
    SECTION("exact fit yields one clip") {
        REQUIRE(respira::extract_clips(make_spec(96), 96, 48, "p", "s").size() == 1);
    }
    SECTION("T=192 stride 48 yields clips at 0, 48, 96") {
        auto spec = make_spec(192);
        auto clips = respira::extract_clips(spec, 96, 48, "p", "s");
        REQUIRE(clips.size() == 3);
        // enumerate expected start positions 0..T-T_w by stride
        std::vector<size_t> starts;
        for (size_t s = 0; s + 96 <= 192; s += 48) starts.push_back(s);
        REQUIRE(starts == std::vector<size_t>{0, 48, 96});
        for (size_t c = 0; c < 3; ++c)
            for (size_t b = 0; b < 4; ++b)
                for (size_t t = 0; t < 96; ++t)
                    REQUIRE(clips[c].at(b, t) == spec.at(b, starts[c] + t));
    }
    SECTION("under-length input yields zero clips") {
        REQUIRE(respira::extract_clips(make_spec(95), 96, 48, "p", "s").empty());
    }
    SECTION("clip count law for arbitrary T >= T_w") {
        Rng rng(9);
        for (int trial = 0; trial < 50; ++trial) {
            const size_t window = 2 + rng.uniform_int(20);
            const size_t stride = 1 + rng.uniform_int(10);
            const size_t frames = window + rng.uniform_int(100);
            auto clips = respira::extract_clips(make_spec(frames), window, stride, "p", "s");
            REQUIRE(clips.size() == (frames - window) / stride + 1);
            for (const auto& c : clips) REQUIRE(c.n_frames == window);
        }
    }
}

TEST_CASE("wav round trip and resampling") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "respira_test.wav").string();
    auto audio = sine(440.0, 0.25, 16000);
    respira::write_wav(path, audio.samples, audio.sample_rate);
    auto back = respira::read_wav(path);
    REQUIRE(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == audio.samples.size());
    for (size_t i = 0; i < audio.samples.size(); ++i)
        REQUIRE(back.samples[i] == Catch::Approx(audio.samples[i]).margin(1.5 / 32768.0));
    fs::remove(path);

    auto up = respira::resample_linear(sine(200.0, 0.5, 8000), 16000);
    REQUIRE(up.sample_rate == 16000);
    REQUIRE(up.samples.size() >= 7990 * 2 / 2);  // ~2x duration in samples
    REQUIRE(up.samples.size() <= 16001);
    // identity when rates match
    auto same = respira::resample_linear(audio, 16000);
    REQUIRE(same.samples == audio.samples);
}

TEST_CASE("manifest loading") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "respira_manifest.tsv").string();
    auto write = [&](const std::string& body) {
        std::ofstream os(path, std::ios::trunc);
        os << body;
    };

    SECTION("a participant in two splits is a SplitViolation") {
        write("p1\ta.wav\t1\ttrain\np1\tb.wav\t0\ttest\n");
        REQUIRE_THROWS_AS(respira::load_manifest(path), respira::SplitViolation);
    }
    SECTION("empty file is a valid empty manifest") {
        write("");
        REQUIRE(respira::load_manifest(path).entries.empty());
    }
    SECTION("3 participants x 2 unlabeled files each") {
        write("p2\tc.wav\t-\tunlabeled\np1\ta.wav\t-\tunlabeled\np3\te.wav\t-\tunlabeled\n"
              "p1\tb.wav\t-\tunlabeled\np3\tf.wav\t-\tunlabeled\np2\td.wav\t-\tunlabeled\n");
        auto mf = respira::load_manifest(path);
        REQUIRE(mf.entries.size() == 6);
        std::set<std::string> ids;
        for (const auto& e : mf.entries) ids.insert(e.participant_id);
        REQUIRE(ids.size() == 3);
        // deterministic (participant, path) ordering
        REQUIRE(mf.entries.front().file_path == "a.wav");
        REQUIRE(mf.entries.back().file_path == "f.wav");
    }
    SECTION("parse errors carry the line number") {
        write("p1\ta.wav\t1\ttrain\np2\tb.wav\tmaybe\ttest\n");
        try {
            respira::load_manifest(path);
            FAIL("expected ParseError");
        } catch (const respira::ParseError& e) {
            REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
    SECTION("label rules per split") {
        write("p1\ta.wav\t-\ttrain\n");
        REQUIRE_THROWS_AS(respira::load_manifest(path), respira::ParseError);
        write("p1\ta.wav\t1\tunlabeled\n");
        REQUIRE_THROWS_AS(respira::load_manifest(path), respira::ParseError);
    }
    fs::remove(path);
}
