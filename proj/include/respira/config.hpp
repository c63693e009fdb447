// Experiment configuration: flat key=value text with [section] headers.
// Unknown sections or keys are parse errors; every key has a default, so an
// empty file is a valid configuration. canonical() emits a reloadable dump
// of the resolved configuration (the run-directory snapshot format), and its
// FNV hash is the experiment hash embedded in artifacts.
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "respira/contrastive.hpp"
#include "respira/downstream.hpp"
#include "respira/encoder.hpp"
#include "respira/errors.hpp"
#include "respira/melspec.hpp"
#include "respira/optim.hpp"
#include "respira/serialize.hpp"
#include "respira/synth.hpp"

namespace respira {

struct PathsConfig {
    std::string manifest;           // labeled corpus (downstream + evaluate)
    std::string pretrain_manifest;  // unlabeled corpus; falls back to manifest
    std::string weights;            // pre-trained encoder file for transfer
    std::string model;              // model file for evaluate/benchmark
    std::string out = "runs/out";   // run directory
};

struct RunConfig {
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};  // "5 runnings" convention
    bool quiet = false;
};

struct BenchmarkRunConfig {
    int trials = 200;
    int warmup = 20;
    std::vector<double> mask_rates{0.0, 0.25, 0.5, 0.75, 1.0};
};

struct GridConfig {
    std::vector<std::string> axes;
    std::map<std::string, std::vector<std::string>> values;
    int parallel = 1;
};

struct ExperimentConfig {
    PathsConfig paths;
    FeatureConfig features;
    EncoderConfig encoder;
    ContrastiveConfig contrastive;
    DownstreamConfig downstream;
    bool transfer = true;          // initialize downstream encoders from paths.weights
    std::string aggregate = "none";  // none|mean|max participant aggregation
    std::string eval_split = "test";
    AdamConfig optimizer;
    SyntheticCorpusSpec synth;
    RunConfig run;
    BenchmarkRunConfig benchmark;
    GridConfig grid;

    std::string canonical() const;
    uint64_t hash() const { return fnv1a(canonical()); }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& v, size_t line) {
    try {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line) + ": expected a number, got '" + v + "'");
    }
}

inline long to_int(const std::string& v, size_t line) {
    try {
        size_t used = 0;
        const long d = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line) + ": expected an integer, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& v, size_t line) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ParseError("line " + std::to_string(line) + ": expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline SimilarityKind parse_metric(const std::string& v, size_t line) {
    if (v == "cosine") return SimilarityKind::kCosine;
    if (v == "bilinear") return SimilarityKind::kBilinear;
    throw ParseError("line " + std::to_string(line) + ": metric must be cosine or bilinear");
}

inline EncoderKind parse_encoder_kind(const std::string& v, size_t line) {
    if (v == "transformer") return EncoderKind::kTransformer;
    if (v == "recurrent" || v == "gru") return EncoderKind::kRecurrent;
    throw ParseError("line " + std::to_string(line) + ": encoder kind must be transformer or recurrent");
}

inline DownstreamArch parse_arch(const std::string& v, size_t line) {
    if (v == "single") return DownstreamArch::kSingle;
    if (v == "ensemble") return DownstreamArch::kEnsemble;
    throw ParseError("line " + std::to_string(line) + ": arch must be single or ensemble");
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    size_t line_no = 0;
    using detail::to_bool;
    using detail::to_double;
    using detail::to_int;

    while (std::getline(is, line)) {
        ++line_no;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.erase(hash_pos);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError("line " + std::to_string(line_no) + ": unterminated section header");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        const std::string where = section + "." + key;

        auto unknown = [&]() -> ParseError {
            return ParseError("line " + std::to_string(line_no) + ": unknown key '" + where + "'");
        };

        if (section == "paths") {
            if (key == "manifest") cfg.paths.manifest = val;
            else if (key == "pretrain_manifest") cfg.paths.pretrain_manifest = val;
            else if (key == "weights") cfg.paths.weights = val;
            else if (key == "model") cfg.paths.model = val;
            else if (key == "out") cfg.paths.out = val;
            else throw unknown();
        } else if (section == "features") {
            if (key == "sample_rate") cfg.features.sample_rate = static_cast<int>(to_int(val, line_no));
            else if (key == "frame_ms") cfg.features.frame_ms = to_double(val, line_no);
            else if (key == "hop_ms") cfg.features.hop_ms = to_double(val, line_no);
            else if (key == "n_bins") {
                cfg.features.n_bins = static_cast<int>(to_int(val, line_no));
                cfg.encoder.n_bins = cfg.features.n_bins;
            } else if (key == "fmin_hz") cfg.features.fmin_hz = to_double(val, line_no);
            else if (key == "fmax_hz") cfg.features.fmax_hz = to_double(val, line_no);
            else if (key == "log_eps") cfg.features.log_eps = to_double(val, line_no);
            else if (key == "window_frames") cfg.features.window_frames = static_cast<int>(to_int(val, line_no));
            else if (key == "clip_stride") cfg.features.clip_stride = static_cast<int>(to_int(val, line_no));
            else throw unknown();
        } else if (section == "encoder") {
            if (key == "kind") cfg.encoder.kind = detail::parse_encoder_kind(val, line_no);
            else if (key == "d_model") cfg.encoder.d_model = static_cast<int>(to_int(val, line_no));
            else if (key == "n_layers") cfg.encoder.n_layers = static_cast<int>(to_int(val, line_no));
            else if (key == "n_heads") cfg.encoder.n_heads = static_cast<int>(to_int(val, line_no));
            else if (key == "ffn_dim") cfg.encoder.ffn_dim = static_cast<int>(to_int(val, line_no));
            else if (key == "dropout") cfg.encoder.dropout = to_double(val, line_no);
            else if (key == "positional_encoding") cfg.encoder.positional_encoding = to_bool(val, line_no);
            else if (key == "normalize_frames") cfg.encoder.normalize_frames = to_bool(val, line_no);
            else throw unknown();
        } else if (section == "contrastive") {
            if (key == "metric") cfg.contrastive.metric = detail::parse_metric(val, line_no);
            else if (key == "temperature") cfg.contrastive.temperature = to_double(val, line_no);
            else if (key == "batch") cfg.contrastive.batch = static_cast<int>(to_int(val, line_no));
            else if (key == "pretrain_mask_rate") cfg.contrastive.mask_rate = to_double(val, line_no);
            else if (key == "epochs") cfg.contrastive.epochs = static_cast<int>(to_int(val, line_no));
            else throw unknown();
        } else if (section == "downstream") {
            if (key == "arch") cfg.downstream.arch = detail::parse_arch(val, line_no);
            else if (key == "downstream_mask_rate") cfg.downstream.mask_rate = to_double(val, line_no);
            else if (key == "freeze_encoder") cfg.downstream.freeze_encoder = to_bool(val, line_no);
            else if (key == "threshold") cfg.downstream.threshold = to_double(val, line_no);
            else if (key == "batch") cfg.downstream.batch = static_cast<int>(to_int(val, line_no));
            else if (key == "epochs") cfg.downstream.epochs = static_cast<int>(to_int(val, line_no));
            else if (key == "early_stop_patience") cfg.downstream.early_stop_patience = static_cast<int>(to_int(val, line_no));
            else if (key == "pos_weight") cfg.downstream.pos_weight = to_double(val, line_no);
            else if (key == "label_fraction") cfg.downstream.label_fraction = to_double(val, line_no);
            else if (key == "transfer") cfg.transfer = to_bool(val, line_no);
            else if (key == "aggregate") cfg.aggregate = val;
            else if (key == "eval_split") cfg.eval_split = val;
            else throw unknown();
        } else if (section == "optimizer") {
            if (key == "lr") cfg.optimizer.lr = to_double(val, line_no);
            else if (key == "beta1") cfg.optimizer.beta1 = to_double(val, line_no);
            else if (key == "beta2") cfg.optimizer.beta2 = to_double(val, line_no);
            else if (key == "eps") cfg.optimizer.eps = to_double(val, line_no);
            else if (key == "plateau_factor") cfg.optimizer.plateau_factor = to_double(val, line_no);
            else if (key == "plateau_patience") cfg.optimizer.plateau_patience = static_cast<int>(to_int(val, line_no));
            else throw unknown();
        } else if (section == "synth") {
            if (key == "n_participants") cfg.synth.n_participants = static_cast<int>(to_int(val, line_no));
            else if (key == "clips_per_participant") cfg.synth.clips_per_participant = static_cast<int>(to_int(val, line_no));
            else if (key == "positive_fraction") cfg.synth.positive_fraction = to_double(val, line_no);
            else if (key == "signature_bins") cfg.synth.signature_bins_per_participant = static_cast<int>(to_int(val, line_no));
            else if (key == "noise_level") cfg.synth.noise_level = to_double(val, line_no);
            else if (key == "label_effect") cfg.synth.label_effect = to_double(val, line_no);
            else if (key == "seed") cfg.synth.seed = static_cast<uint64_t>(to_int(val, line_no));
            else if (key == "clip_seconds") cfg.synth.clip_seconds = to_double(val, line_no);
            else if (key == "unlabeled_fraction") cfg.synth.unlabeled_fraction = to_double(val, line_no);
            else if (key == "train_fraction") cfg.synth.train_fraction = to_double(val, line_no);
            else if (key == "val_fraction") cfg.synth.val_fraction = to_double(val, line_no);
            else if (key == "amp_jitter") cfg.synth.amp_jitter = to_double(val, line_no);
            else if (key == "distractor_tones") cfg.synth.distractor_tones = static_cast<int>(to_int(val, line_no));
            else if (key == "distractor_level") cfg.synth.distractor_level = to_double(val, line_no);
            else throw unknown();
        } else if (section == "run") {
            if (key == "seeds") {
                cfg.run.seeds.clear();
                for (const auto& s : detail::split_list(val))
                    cfg.run.seeds.push_back(static_cast<uint64_t>(to_int(s, line_no)));
                if (cfg.run.seeds.empty())
                    throw ParseError("line " + std::to_string(line_no) + ": seeds must be non-empty");
            } else if (key == "quiet") cfg.run.quiet = to_bool(val, line_no);
            else throw unknown();
        } else if (section == "benchmark") {
            if (key == "trials") cfg.benchmark.trials = static_cast<int>(to_int(val, line_no));
            else if (key == "warmup") cfg.benchmark.warmup = static_cast<int>(to_int(val, line_no));
            else if (key == "mask_rates") {
                cfg.benchmark.mask_rates.clear();
                for (const auto& s : detail::split_list(val))
                    cfg.benchmark.mask_rates.push_back(to_double(s, line_no));
            } else throw unknown();
        } else if (section == "grid") {
            if (key == "axes") cfg.grid.axes = detail::split_list(val);
            else if (key == "parallel") cfg.grid.parallel = static_cast<int>(to_int(val, line_no));
            else cfg.grid.values[key] = detail::split_list(val);
        } else {
            throw ParseError("line " + std::to_string(line_no) + ": unknown section '" + section + "'");
        }
    }

    // grid axes must have value lists and be known names
    static const std::vector<std::string> kAxes{
        "pretrain_mask_rate", "downstream_mask_rate", "metric",  "arch",
        "freeze_encoder",     "encoder_kind",         "d_model", "dropout",
        "transfer"};
    for (const auto& axis : cfg.grid.axes) {
        if (std::find(kAxes.begin(), kAxes.end(), axis) == kAxes.end())
            throw ParseError("unknown grid axis '" + axis + "'");
        if (!cfg.grid.values.count(axis) || cfg.grid.values[axis].empty())
            throw ParseError("grid axis '" + axis + "' has no values");
    }
    for (const auto& [key, vals] : cfg.grid.values)
        if (std::find(cfg.grid.axes.begin(), cfg.grid.axes.end(), key) == cfg.grid.axes.end())
            throw ParseError("grid values for '" + key + "' but it is not listed in axes");
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

inline std::string ExperimentConfig::canonical() const {
    std::ostringstream os;
    os << "[paths]\n";
    os << "manifest = " << paths.manifest << "\n";
    os << "pretrain_manifest = " << paths.pretrain_manifest << "\n";
    os << "weights = " << paths.weights << "\n";
    os << "model = " << paths.model << "\n";
    os << "out = " << paths.out << "\n";
    os << "[features]\n";
    os << "sample_rate = " << features.sample_rate << "\n";
    os << "frame_ms = " << features.frame_ms << "\n";
    os << "hop_ms = " << features.hop_ms << "\n";
    os << "n_bins = " << features.n_bins << "\n";
    os << "fmin_hz = " << features.fmin_hz << "\n";
    os << "fmax_hz = " << features.fmax_hz << "\n";
    os << "log_eps = " << features.log_eps << "\n";
    os << "window_frames = " << features.window_frames << "\n";
    os << "clip_stride = " << features.clip_stride << "\n";
    os << "[encoder]\n";
    os << "kind = " << encoder_kind_name(encoder.kind) << "\n";
    os << "d_model = " << encoder.d_model << "\n";
    os << "n_layers = " << encoder.n_layers << "\n";
    os << "n_heads = " << encoder.n_heads << "\n";
    os << "ffn_dim = " << encoder.ffn_dim << "\n";
    os << "dropout = " << encoder.dropout << "\n";
    os << "positional_encoding = " << (encoder.positional_encoding ? "true" : "false") << "\n";
    os << "normalize_frames = " << (encoder.normalize_frames ? "true" : "false") << "\n";
    os << "[contrastive]\n";
    os << "metric = " << similarity_name(contrastive.metric) << "\n";
    os << "temperature = " << contrastive.temperature << "\n";
    os << "batch = " << contrastive.batch << "\n";
    os << "pretrain_mask_rate = " << contrastive.mask_rate << "\n";
    os << "epochs = " << contrastive.epochs << "\n";
    os << "[downstream]\n";
    os << "arch = " << arch_name(downstream.arch) << "\n";
    os << "downstream_mask_rate = " << downstream.mask_rate << "\n";
    os << "freeze_encoder = " << (downstream.freeze_encoder ? "true" : "false") << "\n";
    os << "threshold = " << downstream.threshold << "\n";
    os << "batch = " << downstream.batch << "\n";
    os << "epochs = " << downstream.epochs << "\n";
    os << "early_stop_patience = " << downstream.early_stop_patience << "\n";
    os << "pos_weight = " << downstream.pos_weight << "\n";
    os << "label_fraction = " << downstream.label_fraction << "\n";
    os << "transfer = " << (transfer ? "true" : "false") << "\n";
    os << "aggregate = " << aggregate << "\n";
    os << "eval_split = " << eval_split << "\n";
    os << "[optimizer]\n";
    os << "lr = " << optimizer.lr << "\n";
    os << "beta1 = " << optimizer.beta1 << "\n";
    os << "beta2 = " << optimizer.beta2 << "\n";
    os << "eps = " << optimizer.eps << "\n";
    os << "plateau_factor = " << optimizer.plateau_factor << "\n";
    os << "plateau_patience = " << optimizer.plateau_patience << "\n";
    os << "[synth]\n";
    os << "n_participants = " << synth.n_participants << "\n";
    os << "clips_per_participant = " << synth.clips_per_participant << "\n";
    os << "positive_fraction = " << synth.positive_fraction << "\n";
    os << "signature_bins = " << synth.signature_bins_per_participant << "\n";
    os << "noise_level = " << synth.noise_level << "\n";
    os << "label_effect = " << synth.label_effect << "\n";
    os << "seed = " << synth.seed << "\n";
    os << "clip_seconds = " << synth.clip_seconds << "\n";
    os << "unlabeled_fraction = " << synth.unlabeled_fraction << "\n";
    os << "train_fraction = " << synth.train_fraction << "\n";
    os << "val_fraction = " << synth.val_fraction << "\n";
    os << "amp_jitter = " << synth.amp_jitter << "\n";
    os << "distractor_tones = " << synth.distractor_tones << "\n";
    os << "distractor_level = " << synth.distractor_level << "\n";
    os << "[run]\n";
    os << "seeds = ";
    for (size_t i = 0; i < run.seeds.size(); ++i) os << (i ? "," : "") << run.seeds[i];
    os << "\n";
    os << "quiet = " << (run.quiet ? "true" : "false") << "\n";
    os << "[benchmark]\n";
    os << "trials = " << benchmark.trials << "\n";
    os << "warmup = " << benchmark.warmup << "\n";
    os << "mask_rates = ";
    for (size_t i = 0; i < benchmark.mask_rates.size(); ++i)
        os << (i ? "," : "") << benchmark.mask_rates[i];
    os << "\n";
    if (!grid.axes.empty()) {
        os << "[grid]\n";
        os << "axes = ";
        for (size_t i = 0; i < grid.axes.size(); ++i) os << (i ? "," : "") << grid.axes[i];
        os << "\n";
        for (const auto& axis : grid.axes) {
            os << axis << " = ";
            const auto& vals = grid.values.at(axis);
            for (size_t i = 0; i < vals.size(); ++i) os << (i ? "," : "") << vals[i];
            os << "\n";
        }
        os << "parallel = " << grid.parallel << "\n";
    }
    return os.str();
}

}  // namespace respira
