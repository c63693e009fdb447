// Run orchestration behind the CLI: run directories, the pretrain ->
// finetune -> evaluate pipelines, the latency benchmark, and the ablation
// grid runner with per-seed aggregation. Training runs in float; everything
// is driven by one seeded rng per run, so a rerun with the same config and
// seed writes bit-identical artifacts.
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "respira/benchmark.hpp"
#include "respira/config.hpp"
#include "respira/contrastive.hpp"
#include "respira/dataset.hpp"
#include "respira/downstream.hpp"
#include "respira/metrics.hpp"
#include "respira/synth.hpp"

namespace respira::pipeline {

namespace fs = std::filesystem;

inline std::string feature_canonical(const FeatureConfig& f) {
    std::ostringstream os;
    os << "sr=" << f.sample_rate << ";frame=" << f.frame_ms << ";hop=" << f.hop_ms
       << ";bins=" << f.n_bins << ";fmin=" << f.fmin_hz << ";fmax=" << f.fmax_hz
       << ";eps=" << f.log_eps << ";win=" << f.window_frames << ";stride=" << f.clip_stride;
    return os.str();
}

/// Process-wide feature cache: extracting log-mels for a corpus is pure, so
/// grid cells sharing a manifest reuse the clips. Guarded for parallel cells.
inline std::shared_ptr<const ClipStore> cached_clips(const std::string& manifest_path,
                                                     const FeatureConfig& feat) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<const ClipStore>> cache;
    const std::string key = fs::absolute(manifest_path).string() + "|" + feature_canonical(feat);
    {
        std::scoped_lock lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    auto store = std::make_shared<ClipStore>(load_clips_from_file(manifest_path, feat));
    std::scoped_lock lock(mu);
    return cache.emplace(key, std::move(store)).first->second;
}

inline void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << text;
}

inline void snapshot_config(const ExperimentConfig& cfg, const std::string& dir) {
    write_text((fs::path(dir) / "config.ini").string(), cfg.canonical());
}

template <typename S>
ParameterStore<S> subset_store(const ParameterStore<S>& store,
                               const std::vector<std::string>& prefixes) {
    ParameterStore<S> out;
    out.config_hash = store.config_hash;
    out.phase_tag = store.phase_tag;
    for (const auto& [name, t] : store.entries())
        for (const auto& p : prefixes)
            if (name.rfind(p, 0) == 0) {
                out.put(name, t);
                break;
            }
    return out;
}

struct PretrainOutputs {
    std::string encoder_path;
    std::string head_path;
    PretrainResult result;
};

/// Phase-1 run: pre-trains on the unlabeled split of the pretraining corpus
/// and persists the encoder; the projection head and W_s are saved
/// separately and never transferred.
inline PretrainOutputs run_pretrain(const ExperimentConfig& cfg, uint64_t seed,
                                    const std::string& out_dir) {
    const std::string manifest =
        cfg.paths.pretrain_manifest.empty() ? cfg.paths.manifest : cfg.paths.pretrain_manifest;
    if (manifest.empty()) throw InvalidConfig("no pretraining manifest configured");
    auto clips = cached_clips(manifest, cfg.features);
    auto pools = clips->participant_pools(Split::kUnlabeled);
    if (pools.empty()) throw EmptySplit("pretraining needs a non-empty unlabeled split");

    ensure_dir(out_dir);
    snapshot_config(cfg, out_dir);

    ParameterStore<float> store;
    Rng rng(seed);
    init_encoder_params(store, "enc.", cfg.encoder, rng);
    init_projection_params(store, "proj.", cfg.encoder.d_model, rng, 0.02);
    if (cfg.contrastive.metric == SimilarityKind::kBilinear)
        init_similarity_params<float>(store, "sim.ws", cfg.encoder.d_model);
    store.config_hash = cfg.encoder.hash();
    store.phase_tag = "pretrain";

    std::ofstream log((fs::path(out_dir) / "train_log.tsv").string(), std::ios::trunc);
    PretrainOutputs out;
    out.result = pretrain(store, clips->clips, pools, cfg.encoder, cfg.contrastive,
                          cfg.optimizer, rng, [&](const PretrainStepLog& entry) {
                              char line[96];
                              std::snprintf(line, sizeof line, "%ld\t%.6f\t%.6g",
                                            entry.step, entry.loss, entry.lr);
                              log << line << "\n";
                              if (!cfg.run.quiet)
                                  std::cout << "pretrain step " << line << std::endl;
                          });
    log.close();

    const std::string info = cfg.encoder.canonical() +
                             ";contrastive{metric=" + similarity_name(cfg.contrastive.metric) +
                             ";tau=" + std::to_string(cfg.contrastive.temperature) +
                             ";mask_rate=" + std::to_string(cfg.contrastive.mask_rate) + "}";
    out.encoder_path = (fs::path(out_dir) / "encoder.rsw").string();
    save_store(subset_store(store, {"enc."}), out.encoder_path, info);
    out.head_path = (fs::path(out_dir) / "pretrain_head.rsw").string();
    save_store(subset_store(store, {"proj.", "sim."}), out.head_path, info);
    return out;
}

struct ScoreOutputs {
    EvalReport report;
    std::string predictions_tsv;  // source_id <TAB> probability <TAB> decision
};

template <typename S>
ScoreOutputs score_model(const DownstreamModel<S>& model, const ClipStore& clips,
                         const std::vector<size_t>& ids, uint64_t seed,
                         const std::string& aggregate) {
    if (ids.empty()) throw EmptySplit("no clips in the evaluation split");
    Rng rng = Rng(seed).fork(0xe7a1);
    ScoreOutputs out;
    std::vector<std::pair<double, int>> clip_scores;
    std::map<std::string, std::vector<double>> probs_by_pid;
    std::map<std::string, int> label_by_pid;
    std::ostringstream lines;
    for (size_t id : ids) {
        const auto& clip = clips.clips[id];
        if (!clip.label) throw InvalidConfig("unlabeled clip in the evaluation split");
        const double p = predict(model, clip, rng, false);
        clip_scores.push_back({p, *clip.label});
        char line[256];
        std::snprintf(line, sizeof line, "%s\t%.6f\t%d", clip.source_id.c_str(), p,
                      p > model.cfg.threshold ? 1 : 0);
        lines << line << "\n";
        probs_by_pid[clip.participant_id].push_back(p);
        label_by_pid[clip.participant_id] = *clip.label;
    }
    out.predictions_tsv = lines.str();
    if (aggregate == "none") {
        out.report = compute_metrics(clip_scores, model.cfg.threshold);
    } else {
        std::vector<std::pair<double, int>> participant_scores;
        for (const auto& [pid, probs] : probs_by_pid)
            participant_scores.push_back(
                {aggregate_participant(probs, aggregate), label_by_pid[pid]});
        out.report = compute_metrics(participant_scores, model.cfg.threshold);
    }
    out.report.run_seed = seed;
    return out;
}

inline Split parse_eval_split(const std::string& name) {
    if (name == "train") return Split::kTrain;
    if (name == "val") return Split::kVal;
    if (name == "test") return Split::kTest;
    throw InvalidConfig("eval_split must be train, val or test, got '" + name + "'");
}

inline void write_report_files(const EvalReport& report, uint64_t experiment_hash,
                               const std::string& dir) {
    std::string kv = report_to_kv(report);
    char hash_line[64];
    std::snprintf(hash_line, sizeof hash_line, "config_hash=%016llx\n",
                  static_cast<unsigned long long>(experiment_hash));
    kv += hash_line;
    write_text((fs::path(dir) / "report.txt").string(), kv);
    auto j = report_to_json(report);
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(experiment_hash));
    j["config_hash"] = hex;
    write_text((fs::path(dir) / "report.json").string(), j.dump(2) + "\n");
}

struct FinetuneOutputs {
    std::string model_path;
    FinetuneResult result;
    EvalReport report;
};

/// Phase-2 run: builds the downstream model (transferring pre-trained
/// encoder weights unless transfer is off), fine-tunes on the labeled train
/// split at the configured label budget, retains the best-validation
/// weights, and scores the evaluation split.
inline FinetuneOutputs run_finetune(const ExperimentConfig& cfg, uint64_t seed,
                                    const std::string& out_dir) {
    if (cfg.paths.manifest.empty()) throw InvalidConfig("no labeled manifest configured");
    auto clips = cached_clips(cfg.paths.manifest, cfg.features);

    ensure_dir(out_dir);
    snapshot_config(cfg, out_dir);

    Rng rng(seed);
    auto train_pools = clips->participant_pools(Split::kTrain);
    if (cfg.downstream.label_fraction < 1.0 && !train_pools.empty()) {
        const size_t keep = std::max<size_t>(
            1, static_cast<size_t>(std::lround(cfg.downstream.label_fraction *
                                               static_cast<double>(train_pools.size()))));
        std::vector<std::vector<size_t>> selected;
        for (size_t idx : rng.sample_without_replacement(train_pools.size(), keep))
            selected.push_back(train_pools[idx]);
        train_pools = std::move(selected);
    }
    std::vector<size_t> train_ids;
    for (const auto& pool : train_pools)
        train_ids.insert(train_ids.end(), pool.begin(), pool.end());
    std::sort(train_ids.begin(), train_ids.end());
    const auto val_ids = clips->ids_in_split(Split::kVal);

    WeightFile wf;
    const WeightFile* transfer = nullptr;
    if (cfg.transfer) {
        if (cfg.paths.weights.empty())
            throw InvalidConfig("transfer is on but paths.weights is not set");
        wf = load_weight_file(cfg.paths.weights);
        transfer = &wf;
    }
    auto model = init_downstream_model<float>(cfg.encoder, cfg.downstream, rng, transfer);

    std::ofstream log((fs::path(out_dir) / "finetune_log.tsv").string(), std::ios::trunc);
    FinetuneOutputs out;
    out.result = finetune(model, clips->clips, train_ids, val_ids, cfg.optimizer, rng,
                          [&](int epoch, double train_loss, double val_loss, double lr) {
                              char line[128];
                              std::snprintf(line, sizeof line, "%d\t%.6f\t%.6f\t%.6g", epoch,
                                            train_loss, val_loss, lr);
                              log << line << "\n";
                              if (!cfg.run.quiet)
                                  std::cout << "finetune epoch " << line << std::endl;
                          });
    log.close();

    out.model_path = (fs::path(out_dir) / "model.rsw").string();
    save_downstream_model(model, out.model_path);

    auto scored = score_model(model, *clips, clips->ids_in_split(parse_eval_split(cfg.eval_split)),
                              seed, cfg.aggregate);
    out.report = scored.report;
    write_report_files(out.report, cfg.hash(), out_dir);
    write_text((fs::path(out_dir) / "predictions.tsv").string(), scored.predictions_tsv);
    return out;
}

/// Scores an existing model file on the configured split.
inline EvalReport run_evaluate(const ExperimentConfig& cfg, uint64_t seed,
                               const std::string& out_dir) {
    if (cfg.paths.model.empty()) throw InvalidConfig("paths.model is not set");
    if (cfg.paths.manifest.empty()) throw InvalidConfig("no manifest configured");
    auto model = load_downstream_model<float>(cfg.paths.model, cfg.encoder, cfg.downstream);
    auto clips = cached_clips(cfg.paths.manifest, cfg.features);
    ensure_dir(out_dir);
    snapshot_config(cfg, out_dir);
    auto scored = score_model(model, *clips, clips->ids_in_split(parse_eval_split(cfg.eval_split)),
                              seed, cfg.aggregate);
    write_report_files(scored.report, cfg.hash(), out_dir);
    write_text((fs::path(out_dir) / "predictions.tsv").string(), scored.predictions_tsv);
    return scored.report;
}

inline std::string run_synth(const ExperimentConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    snapshot_config(cfg, out_dir);
    generate_synthetic_corpus(cfg.synth, cfg.features, out_dir);
    return (fs::path(out_dir) / "manifest.tsv").string();
}

/// One row per downstream mask rate for the loaded model, mirroring the
/// latency table's (arch, rate) axes. Relative orderings are the contract;
/// absolute times are hardware-specific.
inline std::string run_benchmark(const ExperimentConfig& cfg, uint64_t seed,
                                 const std::string& out_dir) {
    if (cfg.paths.model.empty()) throw InvalidConfig("paths.model is not set");
    auto model = load_downstream_model<float>(cfg.paths.model, cfg.encoder, cfg.downstream);

    MelClip clip;
    if (!cfg.paths.manifest.empty()) {
        auto clips = cached_clips(cfg.paths.manifest, cfg.features);
        auto ids = clips->ids_in_split(parse_eval_split(cfg.eval_split));
        if (ids.empty()) throw EmptySplit("no clips to benchmark on");
        clip = clips->clips[ids.front()];
    } else {
        clip.n_bins = static_cast<size_t>(cfg.features.n_bins);
        clip.n_frames = static_cast<size_t>(cfg.features.window_frames);
        clip.values.resize(clip.n_bins * clip.n_frames);
        Rng noise(seed);
        for (auto& v : clip.values) v = static_cast<float>(noise.uniform(-1.0, 1.0));
    }

    std::ostringstream table;
    table << "arch\tmask_rate\tmean_us\tp50_us\tp95_us\ttrials\n";
    Rng rng(seed);
    for (double rate : cfg.benchmark.mask_rates) {
        auto timed = model;
        timed.cfg.mask_rate = rate;
        auto stats = benchmark_inference([&] { (void)predict(timed, clip, rng, false); },
                                         static_cast<size_t>(cfg.benchmark.trials),
                                         static_cast<size_t>(cfg.benchmark.warmup));
        char line[160];
        std::snprintf(line, sizeof line, "%s\t%.2f\t%.2f\t%.2f\t%.2f\t%zu",
                      arch_name(model.cfg.arch), rate, stats.mean_s * 1e6, stats.p50_s * 1e6,
                      stats.p95_s * 1e6, stats.trials);
        table << line << "\n";
    }
    ensure_dir(out_dir);
    snapshot_config(cfg, out_dir);
    write_text((fs::path(out_dir) / "benchmark.tsv").string(), table.str());
    return table.str();
}

// --- grid runner -------------------------------------------------------------

inline ExperimentConfig apply_axis(ExperimentConfig cfg, const std::string& axis,
                                   const std::string& value) {
    const size_t line = 0;
    if (axis == "pretrain_mask_rate") cfg.contrastive.mask_rate = detail::to_double(value, line);
    else if (axis == "downstream_mask_rate") cfg.downstream.mask_rate = detail::to_double(value, line);
    else if (axis == "metric") cfg.contrastive.metric = detail::parse_metric(value, line);
    else if (axis == "arch") cfg.downstream.arch = detail::parse_arch(value, line);
    else if (axis == "freeze_encoder") cfg.downstream.freeze_encoder = detail::to_bool(value, line);
    else if (axis == "encoder_kind") cfg.encoder.kind = detail::parse_encoder_kind(value, line);
    else if (axis == "d_model") cfg.encoder.d_model = static_cast<int>(detail::to_int(value, line));
    else if (axis == "dropout") cfg.encoder.dropout = detail::to_double(value, line);
    else if (axis == "transfer") cfg.transfer = detail::to_bool(value, line);
    else throw InvalidConfig("unknown grid axis '" + axis + "'");
    return cfg;
}

struct GridCell {
    std::string key;                              // "axis=value,..." (directory name)
    std::vector<std::pair<std::string, std::string>> assignment;
};

inline std::vector<GridCell> grid_cells(const GridConfig& grid) {
    std::vector<GridCell> cells{{std::string(), {}}};
    for (const auto& axis : grid.axes) {
        std::vector<GridCell> next;
        for (const auto& cell : cells)
            for (const auto& value : grid.values.at(axis)) {
                GridCell c = cell;
                c.assignment.emplace_back(axis, value);
                c.key += (c.key.empty() ? "" : ",") + axis + "=" + value;
                next.push_back(std::move(c));
            }
        cells = std::move(next);
    }
    return cells;
}

struct GridCellResult {
    std::string cell;
    std::vector<EvalReport> per_seed;
};

struct GridSummaryRow {
    std::string cell;
    double auc_mean = 0, auc_std = 0;
    double recall_mean = 0, recall_std = 0;
    double precision_mean = 0, precision_std = 0;
    double accuracy_mean = 0, accuracy_std = 0;
    double average_f1 = 0;  // from mean precision and mean recall
};

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

inline GridSummaryRow summarize_cell(const GridCellResult& r) {
    GridSummaryRow row;
    row.cell = r.cell;
    std::vector<double> auc, rec, prec, acc;
    for (const auto& rep : r.per_seed) {
        if (rep.roc_auc) auc.push_back(*rep.roc_auc);
        rec.push_back(rep.recall);
        prec.push_back(rep.precision);
        acc.push_back(rep.accuracy);
    }
    if (!auc.empty()) std::tie(row.auc_mean, row.auc_std) = mean_std(auc);
    std::tie(row.recall_mean, row.recall_std) = mean_std(rec);
    std::tie(row.precision_mean, row.precision_std) = mean_std(prec);
    std::tie(row.accuracy_mean, row.accuracy_std) = mean_std(acc);
    row.average_f1 = average_f1(row.precision_mean, row.recall_mean);  // table convention
    return row;
}

inline std::string format_grid_summary(const std::vector<GridSummaryRow>& rows) {
    std::ostringstream os;
    os << "cell\troc_auc\trecall\tprecision\taccuracy\taverage_f1\n";
    for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "%s\t%.2f (%.2f)\t%.2f (%.2f)\t%.2f (%.2f)\t%.2f (%.2f)\t%.2f",
                      r.cell.empty() ? "(base)" : r.cell.c_str(), 100 * r.auc_mean,
                      100 * r.auc_std, 100 * r.recall_mean, 100 * r.recall_std,
                      100 * r.precision_mean, 100 * r.precision_std, 100 * r.accuracy_mean,
                      100 * r.accuracy_std, 100 * r.average_f1);
        os << buf << "\n";
    }
    return os.str();
}

/// Runs every (cell, seed) of the configured grid. Completed cells (their
/// report.json exists) are skipped, so a killed grid resumes where it
/// stopped. Pre-trained encoders are cached per (pretraining config, seed)
/// and shared across cells; independent cells may run on parallel workers.
inline std::vector<GridSummaryRow> run_grid(const ExperimentConfig& cfg) {
    if (cfg.grid.axes.empty()) throw InvalidConfig("grid has no axes");
    const auto cells = grid_cells(cfg.grid);
    const fs::path root = fs::path(cfg.paths.out) / "grid";
    ensure_dir(root.string());
    snapshot_config(cfg, cfg.paths.out);

    struct Task {
        size_t cell_idx;
        uint64_t seed;
    };
    std::vector<Task> tasks;
    for (size_t c = 0; c < cells.size(); ++c)
        for (uint64_t seed : cfg.run.seeds) tasks.push_back({c, seed});

    std::vector<GridCellResult> results(cells.size());
    for (size_t c = 0; c < cells.size(); ++c) results[c].cell = cells[c].key;
    std::mutex results_mu, pretrain_mu, print_mu;
    std::map<std::string, std::shared_future<std::string>> pretrain_jobs;

    auto ensure_pretrained = [&](const ExperimentConfig& cell_cfg,
                                 uint64_t seed) -> std::string {
        // key on everything that shapes the pre-trained weights
        std::ostringstream key_src;
        key_src << feature_canonical(cell_cfg.features) << "|" << cell_cfg.encoder.canonical()
                << "|" << similarity_name(cell_cfg.contrastive.metric) << ";tau="
                << cell_cfg.contrastive.temperature << ";B=" << cell_cfg.contrastive.batch
                << ";rate=" << cell_cfg.contrastive.mask_rate << ";epochs="
                << cell_cfg.contrastive.epochs << "|lr=" << cell_cfg.optimizer.lr << "|seed="
                << seed;
        char hex[32];
        std::snprintf(hex, sizeof hex, "%016llx",
                      static_cast<unsigned long long>(fnv1a(key_src.str())));
        const fs::path dir = root / "pretrain" / hex;
        const std::string encoder_path = (dir / "encoder.rsw").string();

        std::shared_future<std::string> job;
        std::promise<std::string> p;
        bool owner = false;
        {
            std::scoped_lock lock(pretrain_mu);
            auto it = pretrain_jobs.find(encoder_path);
            if (it == pretrain_jobs.end()) {
                job = p.get_future().share();
                pretrain_jobs.emplace(encoder_path, job);
                owner = true;
            } else {
                job = it->second;
            }
        }
        if (owner) {  // the work runs outside the registry lock
            try {
                if (!fs::exists(encoder_path)) run_pretrain(cell_cfg, seed, dir.string());
                p.set_value(encoder_path);
            } catch (...) {
                p.set_exception(std::current_exception());
            }
        }
        return job.get();
    };

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t idx = next.fetch_add(1);
            if (idx >= tasks.size()) return;
            const auto& task = tasks[idx];
            ExperimentConfig cell_cfg = cfg;
            for (const auto& [axis, value] : cells[task.cell_idx].assignment)
                cell_cfg = apply_axis(cell_cfg, axis, value);
            const fs::path cell_dir =
                root / "cells" / (cells[task.cell_idx].key.empty() ? "base" : cells[task.cell_idx].key) /
                ("seed" + std::to_string(task.seed));
            const fs::path report_path = cell_dir / "report.json";

            EvalReport report;
            if (fs::exists(report_path)) {  // resume: completed cells stay untouched
                std::ifstream is(report_path);
                nlohmann::json j;
                is >> j;
                report = report_from_json(j);
            } else {
                if (cell_cfg.transfer)
                    cell_cfg.paths.weights = ensure_pretrained(cell_cfg, task.seed);
                report = run_finetune(cell_cfg, task.seed, cell_dir.string()).report;
            }
            {
                std::scoped_lock lock(results_mu);
                results[task.cell_idx].per_seed.push_back(report);
            }
            if (!cfg.run.quiet) {
                std::scoped_lock lock(print_mu);
                std::cout << "grid cell [" << cells[task.cell_idx].key << "] seed " << task.seed
                          << " done" << std::endl;
            }
        }
    };

    const int workers = std::max(1, cfg.grid.parallel);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int i = 0; i < workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    std::vector<GridSummaryRow> rows;
    rows.reserve(results.size());
    for (auto& r : results) {
        // per-seed order must not depend on scheduling
        std::sort(r.per_seed.begin(), r.per_seed.end(),
                  [](const EvalReport& a, const EvalReport& b) { return a.run_seed < b.run_seed; });
        rows.push_back(summarize_cell(r));
    }
    const std::string table = format_grid_summary(rows);
    write_text((root / "summary.tsv").string(), table);
    if (!cfg.run.quiet) std::cout << table;
    return rows;
}

}  // namespace respira::pipeline
