#pragma once

// Command-line entry point. Subcommands: gen-data, train-context,
// train-local, train-agg, evaluate, ablate, curve, gradcheck.
// Exit codes: 0 success, 1 config error, 2 missing artifact, 3 runtime
// failure. Every command writes a run manifest naming its inputs by digest.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glcn/gradcheck.hpp"
#include "glcn/pipeline.hpp"

namespace glcn {

namespace cli_detail {

inline ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override,
                                    int threads_override) {
    ExperimentConfig cfg = ExperimentConfig::load(path);
    if (seed_override) cfg.seed = *seed_override;
    if (threads_override > 0) cfg.threads = threads_override;
    ThreadPool::instance().set_threads(cfg.threads > 0 ? cfg.threads
                                                       : int(std::thread::hardware_concurrency()));
    return cfg;
}

inline void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

struct LoadedModels {
    LocalNet<float> local;
    std::optional<ContextNet<float>> context;
    std::string local_hash, context_hash;
};

inline LocalNet<float> load_local(const std::string& path, std::string* hash) {
    if (!std::filesystem::exists(path))
        throw MissingArtifactError(cat("missing local checkpoint: ", path));
    if (hash) *hash = sha256_file_hex(path);
    return LocalNet<float>::from_checkpoint(load_checkpoint(path));
}

inline ContextNet<float> load_context(const std::string& path, std::string* hash) {
    if (!std::filesystem::exists(path))
        throw MissingArtifactError(cat("missing context checkpoint: ", path));
    if (hash) *hash = sha256_file_hex(path);
    return ContextNet<float>::from_checkpoint(load_checkpoint(path));
}

inline int run_gen_data(const std::string& config_path, const std::string& out,
                        std::optional<std::uint64_t> seed, int threads, bool overwrite) {
    ExperimentConfig cfg = load_config(config_path, seed, threads);
    ensure_dir(out);
    DatasetManifest manifest = generate_dataset(cfg.dataset, cfg.seed, out, overwrite);
    SplitCounts tr = DatasetManifest::count(manifest.train);
    SplitCounts va = DatasetManifest::count(manifest.val);
    SplitCounts te = DatasetManifest::count(manifest.test);
    std::printf("dataset written to %s\n", out.c_str());
    std::printf("  train: %lld images, %lld lesions (%lld malignant / %lld benign)\n",
                (long long)tr.images, (long long)tr.lesions, (long long)tr.malignant, (long long)tr.benign);
    std::printf("  val:   %lld images, %lld lesions\n", (long long)va.images, (long long)va.lesions);
    std::printf("  test:  %lld images, %lld lesions\n", (long long)te.images, (long long)te.lesions);
    write_run_manifest(out, "gen-data", cfg.hash(), cfg.seed, {},
                       {"manifest.json", "images/"});
    return 0;
}

inline void write_train_outputs(const std::string& out, const std::string& name, const TrainResult& result,
                                const std::string& command, const std::string& config_hash,
                                std::uint64_t seed, const std::map<std::string, std::string>& inputs) {
    ensure_dir(out);
    write_json(result.report.to_json(), out + "/train_report.json");
    if (result.checkpoint) save_checkpoint(out + "/" + name, *result.checkpoint);
    write_run_manifest(out, command, config_hash, seed, inputs,
                       result.checkpoint ? std::vector<std::string>{name, "train_report.json"}
                                         : std::vector<std::string>{"train_report.json"});
    if (!result.checkpoint) fail("training failed: ", result.report.error_message);
    std::printf("%s: best val AUC %.4f at epoch %d (%s after %zu epochs, %.1fs)\n", name.c_str(),
                result.report.best_val_auc, result.report.best_epoch,
                result.report.stopping_reason.c_str(), result.report.epochs.size(),
                result.report.wall_time_sec);
}

template <typename TrainFn>
TrainResult run_maybe_search(const TrainConfig& base, int search_trials, std::uint64_t master_seed,
                             const std::string& out, TrainFn&& train_fn) {
    if (search_trials <= 0) return train_fn(base);
    std::optional<TrainResult> best_result;
    int best_trial = -1;
    SearchResult search = random_search(base, search_trials, master_seed, [&](const TrainConfig& cfg) {
        TrainResult r = train_fn(cfg);
        const bool better = r.report.stopping_reason != "error" &&
                            (!best_result || r.report.best_val_auc > best_result->report.best_val_auc);
        if (better) {
            best_result = r;
            best_trial = int(search_trials); // placeholder, fixed below
        }
        return r;
    });
    nlohmann::json trials = nlohmann::json::array();
    for (std::size_t t = 0; t < search.trials.size(); ++t)
        trials.push_back({{"trial", t},
                          {"lr", search.trials[t].lr},
                          {"best_val_auc", search.trials[t].report.best_val_auc},
                          {"stopping_reason", search.trials[t].report.stopping_reason}});
    ensure_dir(out);
    write_json({{"trials", trials}, {"best_trial", search.best_trial}, {"best_lr", search.best_config.lr}},
               out + "/search_report.json");
    (void)best_trial;
    GLCN_CHECK(best_result.has_value(), "random search produced no usable trial");
    return *best_result;
}

inline int run_train_context(const std::string& config_path, const std::string& data,
                             const std::string& out, std::optional<std::uint64_t> seed, int threads,
                             int search_trials) {
    ExperimentConfig cfg = load_config(config_path, seed, threads);
    DatasetManifest manifest = load_manifest(data);
    ImageStore store(data);
    TrainConfig tc = cfg.train_context;
    tc.seed = derive_seed(cfg.seed, {tag("train-context")});
    TrainResult result = run_maybe_search(tc, search_trials, tc.seed, out, [&](const TrainConfig& c) {
        return train_context(manifest, store, cfg.context_net, cfg.patch, c);
    });
    write_train_outputs(out, "context.glcn", result, "train-context", cfg.hash(), tc.seed,
                        {{"dataset", sha256_file_hex(data + "/manifest.json")}});
    return 0;
}

inline int run_train_local(const std::string& config_path, const std::string& data, const std::string& out,
                           std::optional<std::uint64_t> seed, int threads, int search_trials) {
    ExperimentConfig cfg = load_config(config_path, seed, threads);
    DatasetManifest manifest = load_manifest(data);
    ImageStore store(data);
    TrainConfig tc = cfg.train_local;
    tc.seed = derive_seed(cfg.seed, {tag("train-local")});
    TrainResult result = run_maybe_search(tc, search_trials, tc.seed, out, [&](const TrainConfig& c) {
        return train_local(manifest, store, cfg.local_net, cfg.patch, c);
    });
    write_train_outputs(out, "local.glcn", result, "train-local", cfg.hash(), tc.seed,
                        {{"dataset", sha256_file_hex(data + "/manifest.json")}});
    return 0;
}

inline int run_train_agg(const std::string& config_path, const std::string& data, const std::string& out,
                         const std::string& local_path, const std::string& context_path,
                         const std::string& combo, std::optional<std::uint64_t> seed, int threads,
                         const std::string& cache_stem_arg) {
    ExperimentConfig cfg = load_config(config_path, seed, threads);
    DatasetManifest manifest = load_manifest(data);
    ImageStore store(data);
    std::string local_hash, context_hash;
    LocalNet<float> local = load_local(local_path, &local_hash);
    ContextNet<float> context = load_context(context_path, &context_hash);

    TrainConfig tc = cfg.train_agg;
    if (!combo.empty()) tc.selection = MapSelection::parse(combo);
    tc.seed = derive_seed(cfg.seed, {tag("train-agg"), fnv1a64(tc.selection.name())});

    ensure_dir(out);
    const std::string cache_stem = cache_stem_arg.empty() ? out + "/agg_inputs" : cache_stem_arg;
    std::optional<AggPool> pool = load_agg_pool(cache_stem, local_hash, context_hash);
    if (!pool) {
        pool = build_agg_pool(manifest, store, local, context, cfg.patch, tc.plan, cfg.agg_pool_factor,
                              derive_seed(cfg.seed, {tag("agg-pool")}), local_hash, context_hash);
        save_agg_pool(*pool, manifest, cache_stem);
    }
    TrainResult result = train_agg(manifest, store, *pool, local, context, cfg.patch, tc);
    write_train_outputs(out, "agg.glcn", result, "train-agg", cfg.hash(), tc.seed,
                        {{"dataset", sha256_file_hex(data + "/manifest.json")},
                         {"local", local_hash},
                         {"context", context_hash}});
    return 0;
}

inline int run_evaluate(const std::string& config_path, const std::string& data, const std::string& out,
                        const std::string& local_path, const std::string& context_path,
                        const std::string& agg_path, const std::string& split,
                        std::optional<std::uint64_t> seed, int threads) {
    ExperimentConfig cfg = load_config(config_path, seed, threads);
    DatasetManifest manifest = load_manifest(data);
    ImageStore store(data);
    std::string local_hash, context_hash, agg_hash;
    LocalNet<float> local = load_local(local_path, &local_hash);
    if (!std::filesystem::exists(agg_path))
        throw MissingArtifactError(cat("missing aggregation checkpoint: ", agg_path));
    agg_hash = sha256_file_hex(agg_path);
    Checkpoint agg_ckpt = load_checkpoint(agg_path);
    AggNet<float> agg = AggNet<float>::from_checkpoint(agg_ckpt);
    // The checkpoint metadata records the selection it was trained with.
    MapSelection selection = MapSelection::parse(agg_ckpt.metadata.value("selection", "saliency+embedding"));

    std::optional<ContextNet<float>> context;
    if (selection.saliency) context = load_context(context_path, &context_hash);

    const std::uint64_t eval_seed = derive_seed(cfg.seed, {tag("evaluate"), fnv1a64(split)});
    EvalCaches caches;
    EvalOutput result = evaluate_split(manifest, split, store, local, context ? &*context : nullptr, agg,
                                       selection, cfg.patch, cfg.evaluation, eval_seed, &caches);
    ensure_dir(out);
    save_records(result.records, out + "/records.csv");
    write_json(metrics_to_json(result), out + "/metrics.json");
    std::map<std::string, std::string> inputs = {{"dataset", sha256_file_hex(data + "/manifest.json")},
                                                 {"local", local_hash},
                                                 {"agg", agg_hash}};
    if (!context_hash.empty()) inputs["context"] = context_hash;
    write_run_manifest(out, "evaluate", cfg.hash(), eval_seed, inputs, {"records.csv", "metrics.json"});
    std::printf("%s split: %zu lesions, AUC %.4f (selection %s)\n", split.c_str(), result.records.size(),
                result.auc_value, selection.name().c_str());
    for (const auto& p : result.points)
        std::printf("  FNR<=%.2f -> TNR %.3f  CI [%.3f, %.3f]\n", p.fnr_target, p.tnr, p.ci_low, p.ci_high);
    return 0;
}

inline int run_ablate(const std::string& config_path, const std::string& data, const std::string& out,
                      const std::string& local_path, const std::string& context_path,
                      const std::string& agg_dir, const std::vector<std::string>& combos,
                      const std::vector<std::uint64_t>& seeds, std::optional<std::uint64_t> seed,
                      int threads) {
    ExperimentConfig cfg = load_config(config_path, seed, threads);
    DatasetManifest manifest = load_manifest(data);
    ImageStore store(data);
    std::string local_hash, context_hash;
    LocalNet<float> local = load_local(local_path, &local_hash);
    ContextNet<float> context = load_context(context_path, &context_hash);
    ensure_dir(out);

    EvalCaches caches; // shared: same local/context across the whole grid
    const std::uint64_t eval_seed = derive_seed(cfg.seed, {tag("evaluate"), fnv1a64("test")});
    std::vector<AblationRow> rows;
    for (const std::string& combo : combos) {
        MapSelection selection = MapSelection::parse(combo);
        std::vector<double> aucs;
        for (std::uint64_t s : seeds) {
            const std::string path = cat(agg_dir, "/agg_", selection.name(), "_s", s, ".glcn");
            if (!std::filesystem::exists(path)) {
                std::fprintf(stderr, "ablate: missing checkpoint %s (row continues)\n", path.c_str());
                continue;
            }
            AggNet<float> agg = AggNet<float>::from_checkpoint(load_checkpoint(path));
            EvalOutput result = evaluate_split(manifest, "test", store, local, &context, agg, selection,
                                               cfg.patch, cfg.evaluation, eval_seed, &caches);
            save_records(result.records, cat(out, "/records_", selection.name(), "_s", s, ".csv"));
            aucs.push_back(result.auc_value);
        }
        rows.push_back(summarize_ablation_row(selection.name(), aucs));
    }
    write_ablation_csv(rows, out + "/ablation.csv");
    nlohmann::json jrows = nlohmann::json::array();
    for (const auto& r : rows)
        jrows.push_back({{"combo", r.combo},
                         {"present", r.present},
                         {"mean_auc", r.mean_auc},
                         {"std_auc", r.std_auc},
                         {"seed_aucs", r.seed_aucs}});
    write_json({{"rows", jrows}}, out + "/ablation.json");
    write_run_manifest(out, "ablate", cfg.hash(), eval_seed,
                       {{"dataset", sha256_file_hex(data + "/manifest.json")},
                        {"local", local_hash},
                        {"context", context_hash}},
                       {"ablation.csv", "ablation.json"});
    std::printf("%-34s %8s %8s\n", "combo", "AUC", "std");
    for (const auto& r : rows) {
        if (r.present)
            std::printf("%-34s %8.4f %8.4f\n", r.combo.c_str(), r.mean_auc, r.std_auc);
        else
            std::printf("%-34s %8s %8s\n", r.combo.c_str(), "absent", "-");
    }
    return 0;
}

inline int run_curve(const std::string& records_path, const std::string& out_path, double fnr_max,
                     double fnr_step) {
    std::vector<PredictionRecord> records = load_records(records_path);
    std::vector<double> targets;
    for (double f = 0.0; f <= fnr_max + 1e-12; f += fnr_step) targets.push_back(f);
    std::vector<OperatingPoint> curve = tnr_fnr_curve(records, targets);
    write_curve_csv(curve, out_path);
    std::printf("curve with %zu points written to %s\n", curve.size(), out_path.c_str());
    return 0;
}

inline int run_gradcheck() {
    bool ok = true;
    auto print = [&](const GradCheckOutcome& r) {
        const bool pass = r.max_rel_error < 1e-4;
        ok = ok && pass;
        std::printf("%-28s max rel err %.3e over %zu gradients  [%s]\n", r.name.c_str(), r.max_rel_error,
                    r.checked, pass ? "ok" : "FAIL");
    };
    for (const auto& r : gradcheck_layers()) print(r);
    for (const auto& r : gradcheck_networks()) print(r);
    if (!ok) fail("gradient check failed");
    return 0;
}

} // namespace cli_detail

inline int cli_main(int argc, char** argv) {
    using namespace cli_detail;
    CLI::App app{"patch + global-context lesion classification pipeline"};
    app.require_subcommand(1);

    std::string config_path, data, out, local_path, context_path, agg_path, agg_dir, combo, cache_stem;
    std::string split = "test", records_path, curve_out;
    std::optional<std::uint64_t> seed;
    std::uint64_t seed_raw = 0;
    bool seed_set = false, overwrite = false;
    int threads = 0, search_trials = 0;
    double fnr_max = 0.10, fnr_step = 0.005;
    std::vector<std::string> combos = ablation_combos();
    std::vector<std::uint64_t> seeds = {1, 2, 3};

    auto add_common = [&](CLI::App* cmd, bool needs_data) {
        cmd->add_option("--config", config_path, "experiment config JSON")->required();
        if (needs_data) cmd->add_option("--data", data, "dataset directory")->required();
        cmd->add_option("--seed", seed_raw, "override config seed")->each([&](const std::string&) {
            seed_set = true;
        });
        cmd->add_option("--threads", threads, "worker threads (0 = auto)");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen, false);
    gen->add_option("--out", out, "output directory")->required();
    gen->add_flag("--overwrite", overwrite, "replace an existing dataset");

    auto* tctx = app.add_subcommand("train-context", "train the context (saliency) network");
    add_common(tctx, true);
    tctx->add_option("--out", out, "output directory")->required();
    tctx->add_option("--search", search_trials, "random-search trials (0 = none)");

    auto* tloc = app.add_subcommand("train-local", "train the patch classifier f_loc");
    add_common(tloc, true);
    tloc->add_option("--out", out, "output directory")->required();
    tloc->add_option("--search", search_trials, "random-search trials (0 = none)");

    auto* tagg = app.add_subcommand("train-agg", "train the aggregation network f_agg");
    add_common(tagg, true);
    tagg->add_option("--out", out, "output directory")->required();
    tagg->add_option("--local", local_path, "local checkpoint")->required();
    tagg->add_option("--context", context_path, "context checkpoint")->required();
    tagg->add_option("--combo", combo, "map selection, e.g. saliency+embedding");
    tagg->add_option("--cache", cache_stem, "aggregation input cache stem");

    auto* ev = app.add_subcommand("evaluate", "score the lesions of a split");
    add_common(ev, true);
    ev->add_option("--out", out, "output directory")->required();
    ev->add_option("--local", local_path, "local checkpoint")->required();
    ev->add_option("--context", context_path, "context checkpoint (needed when the selection uses saliency)");
    ev->add_option("--agg", agg_path, "aggregation checkpoint")->required();
    ev->add_option("--split", split, "train|val|test");

    auto* ab = app.add_subcommand("ablate", "evaluate the map-combination grid");
    add_common(ab, true);
    ab->add_option("--out", out, "output directory")->required();
    ab->add_option("--local", local_path, "local checkpoint")->required();
    ab->add_option("--context", context_path, "context checkpoint")->required();
    ab->add_option("--agg-dir", agg_dir, "directory holding agg_<combo>_s<seed>.glcn")->required();
    ab->add_option("--combos", combos, "map combinations");
    ab->add_option("--seeds", seeds, "training seeds");

    auto* cv = app.add_subcommand("curve", "TNR-FNR curve from a records file");
    cv->add_option("--records", records_path, "records.csv from evaluate")->required();
    cv->add_option("--out", curve_out, "output CSV")->required();
    cv->add_option("--fnr-max", fnr_max, "largest FNR target");
    cv->add_option("--fnr-step", fnr_step, "FNR grid step");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    (void)gc;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (seed_set) seed = seed_raw;
    try {
        if (gen->parsed()) return run_gen_data(config_path, out, seed, threads, overwrite);
        if (tctx->parsed()) return run_train_context(config_path, data, out, seed, threads, search_trials);
        if (tloc->parsed()) return run_train_local(config_path, data, out, seed, threads, search_trials);
        if (tagg->parsed())
            return run_train_agg(config_path, data, out, local_path, context_path, combo, seed, threads,
                                 cache_stem);
        if (ev->parsed())
            return run_evaluate(config_path, data, out, local_path, context_path, agg_path, split, seed,
                                threads);
        if (ab->parsed())
            return run_ablate(config_path, data, out, local_path, context_path, agg_dir, combos, seeds,
                              seed, threads);
        if (cv->parsed()) return run_curve(records_path, curve_out, fnr_max, fnr_step);
        if (gc->parsed()) return run_gradcheck();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error(config): %s\n", e.what());
        return 1;
    } catch (const MissingArtifactError& e) {
        std::fprintf(stderr, "error(missing-artifact): %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error(runtime): %s\n", e.what());
        return 3;
    }
    return 1;
}

} // namespace glcn
