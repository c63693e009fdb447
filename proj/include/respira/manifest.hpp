// Dataset manifests: one entry per audio file, tab-separated
//   participant_id <TAB> file_path <TAB> label_or_dash <TAB> split
// Labels are 1/0 and required for train/val/test, forbidden for unlabeled.
// A participant appears in exactly one split.
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "respira/errors.hpp"
#include "respira/melspec.hpp"

namespace respira {

struct ManifestEntry {
    std::string participant_id;
    std::string file_path;
    std::optional<int> label;
    Split split = Split::kUnlabeled;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;  // sorted by (participant_id, file_path)

    std::vector<const ManifestEntry*> in_split(Split s) const {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(&e);
        return out;
    }
};

inline const char* split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
        case Split::kUnlabeled: return "unlabeled";
    }
    return "?";
}

inline Split parse_split(const std::string& s, size_t line_no) {
    if (s == "train") return Split::kTrain;
    if (s == "val") return Split::kVal;
    if (s == "test") return Split::kTest;
    if (s == "unlabeled") return Split::kUnlabeled;
    throw ParseError("line " + std::to_string(line_no) + ": unknown split '" + s + "'");
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read " + path);
    DatasetManifest mf;
    std::map<std::string, Split> seen_split;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        for (;;) {
            const size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4)
            throw ParseError("line " + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                             std::to_string(fields.size()));
        ManifestEntry e;
        e.participant_id = fields[0];
        e.file_path = fields[1];
        e.split = parse_split(fields[3], line_no);
        if (e.participant_id.empty() || e.file_path.empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty participant or path");
        if (fields[2] == "-") {
            if (e.split != Split::kUnlabeled)
                throw ParseError("line " + std::to_string(line_no) + ": label required for split '" +
                                 split_name(e.split) + "'");
        } else if (fields[2] == "0" || fields[2] == "1") {
            if (e.split == Split::kUnlabeled)
                throw ParseError("line " + std::to_string(line_no) +
                                 ": label forbidden for the unlabeled split");
            e.label = fields[2] == "1" ? 1 : 0;
        } else {
            throw ParseError("line " + std::to_string(line_no) + ": label must be 0, 1 or '-', got '" +
                             fields[2] + "'");
        }
        auto [it, inserted] = seen_split.emplace(e.participant_id, e.split);
        if (!inserted && it->second != e.split)
            throw SplitViolation("participant '" + e.participant_id + "' appears in both '" +
                                 split_name(it->second) + "' and '" + split_name(e.split) + "'");
        mf.entries.push_back(std::move(e));
    }
    std::sort(mf.entries.begin(), mf.entries.end(), [](const auto& a, const auto& b) {
        return std::tie(a.participant_id, a.file_path) < std::tie(b.participant_id, b.file_path);
    });
    return mf;
}

inline void save_manifest(const DatasetManifest& mf, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    for (const auto& e : mf.entries) {
        os << e.participant_id << '\t' << e.file_path << '\t'
           << (e.label ? std::to_string(*e.label) : std::string("-")) << '\t'
           << split_name(e.split) << '\n';
    }
    if (!os) throw IoError("short write to " + path);
}

}  // namespace respira
