// respira: self-supervised respiratory-sound classification toolkit.
//
//   respira synth     --config cfg.ini [--out DIR]            corpus generator
//   respira pretrain  --config cfg.ini [--seed N] [--out DIR] phase-1 contrastive training
//   respira finetune  --config cfg.ini [--seed N] [--out DIR] phase-2 classifier training
//   respira evaluate  --config cfg.ini [--seed N] [--out DIR] score a saved model
//   respira benchmark --config cfg.ini [--seed N] [--out DIR] inference latency table
//   respira grid      --config cfg.ini [--out DIR]            ablation grids with seeds
//
// Errors exit nonzero with a single machine-parseable line on stderr:
// "<ErrorClass>: <message>".
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "respira/config.hpp"
#include "respira/pipeline.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_override;
    long long seed_override = -1;
    bool quiet = false;
};

respira::ExperimentConfig resolve(const CliOptions& opt) {
    auto cfg = respira::load_config(opt.config_path);
    if (!opt.out_override.empty()) cfg.paths.out = opt.out_override;
    if (opt.seed_override >= 0)
        cfg.run.seeds = {static_cast<uint64_t>(opt.seed_override)};
    if (opt.quiet) cfg.run.quiet = true;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised cough classification"};
    app.require_subcommand(1);
    app.fallthrough();

    CliOptions opt;
    app.add_option("--config", opt.config_path, "experiment config file")->required();
    app.add_option("--seed", opt.seed_override, "override the seed list with one seed");
    app.add_option("--out", opt.out_override, "override the run directory");
    app.add_flag("--quiet", opt.quiet, "suppress progress output");

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    auto* pretrain = app.add_subcommand("pretrain", "contrastive pre-training");
    auto* finetune = app.add_subcommand("finetune", "downstream fine-tuning + evaluation");
    auto* evaluate = app.add_subcommand("evaluate", "score a saved model");
    auto* benchmark = app.add_subcommand("benchmark", "inference latency table");
    auto* grid = app.add_subcommand("grid", "run an ablation grid");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = resolve(opt);
        const uint64_t seed = cfg.run.seeds.front();
        if (synth->parsed()) {
            const auto manifest = respira::pipeline::run_synth(cfg, cfg.paths.out);
            if (!cfg.run.quiet) std::cout << "wrote " << manifest << std::endl;
        } else if (pretrain->parsed()) {
            auto out = respira::pipeline::run_pretrain(cfg, seed, cfg.paths.out);
            if (!cfg.run.quiet)
                std::cout << "pretrained " << out.encoder_path << " (final loss "
                          << out.result.final_loss << ")" << std::endl;
        } else if (finetune->parsed()) {
            auto out = respira::pipeline::run_finetune(cfg, seed, cfg.paths.out);
            if (!cfg.run.quiet) {
                std::cout << "saved " << out.model_path << std::endl;
                std::cout << respira::report_to_kv(out.report);
            }
        } else if (evaluate->parsed()) {
            auto report = respira::pipeline::run_evaluate(cfg, seed, cfg.paths.out);
            std::cout << respira::report_to_kv(report);
        } else if (benchmark->parsed()) {
            std::cout << respira::pipeline::run_benchmark(cfg, seed, cfg.paths.out);
        } else if (grid->parsed()) {
            respira::pipeline::run_grid(cfg);
        }
    } catch (const respira::Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "Error: %s\n", e.what());
        return 1;
    }
    return 0;
}
