// Manifest -> in-memory clip store: read WAVs, resample to the configured
// rate, compute log-mel features, cut clips. Pure per entry, so loading can
// fan out across workers if ever needed; kept sequential for determinism.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "respira/audio.hpp"
#include "respira/manifest.hpp"
#include "respira/melspec.hpp"

namespace respira {

struct ClipStore {
    std::vector<MelClip> clips;
    std::vector<Split> clip_split;  // parallel to clips

    std::vector<size_t> ids_in_split(Split s) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < clips.size(); ++i)
            if (clip_split[i] == s) out.push_back(i);
        return out;
    }

    /// Clip-id pools grouped by participant inside one split, participant
    /// order sorted by id (deterministic).
    std::vector<std::vector<size_t>> participant_pools(Split s) const {
        std::map<std::string, std::vector<size_t>> by_pid;
        for (size_t i = 0; i < clips.size(); ++i)
            if (clip_split[i] == s) by_pid[clips[i].participant_id].push_back(i);
        std::vector<std::vector<size_t>> pools;
        pools.reserve(by_pid.size());
        for (auto& [pid, ids] : by_pid) pools.push_back(std::move(ids));
        return pools;
    }
};

/// Loads every manifest entry. Relative file paths resolve against the
/// manifest's directory.
inline ClipStore load_clips(const DatasetManifest& mf, const std::string& base_dir,
                            const FeatureConfig& cfg) {
    namespace fs = std::filesystem;
    ClipStore store;
    for (const auto& e : mf.entries) {
        fs::path p(e.file_path);
        if (p.is_relative()) p = fs::path(base_dir) / p;
        RawAudio audio = read_wav(p.string());
        audio = resample_linear(audio, cfg.sample_rate);
        auto spec = compute_logmel(audio, cfg);
        for (auto& clip : extract_clips(spec, cfg.window_frames, cfg.clip_stride,
                                        e.participant_id, e.file_path, e.label)) {
            store.clips.push_back(std::move(clip));
            store.clip_split.push_back(e.split);
        }
    }
    return store;
}

inline ClipStore load_clips_from_file(const std::string& manifest_path,
                                      const FeatureConfig& cfg) {
    auto mf = load_manifest(manifest_path);
    return load_clips(mf, std::filesystem::path(manifest_path).parent_path().string(), cfg);
}

}  // namespace respira
