// Acceptance suite: one pass/fail line per criterion.
//
//  1. gradient suite (layers + full network graphs, < 1e-4, < 2 min)
//  2. AUC rank form == pairwise brute force to 1e-12 (1000 sets, < 1 min)
//  3. map assembly: area oracle, support law, channel counts, recovery
//  4. fusion benefit on synthetic data over 3 seeds (<= 45 min)
//  5. protocol conformance: patience, epoch plan weights, 100-patch eval
//  6. TNR-FNR: monotone curve + exhaustive threshold enumeration
//  7. reproducibility: bit-identical pipeline rerun + checkpoint round-trip
//
// Usage: acceptance [--only 1,2,...] [--work DIR]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "glcn/config.hpp"
#include "glcn/gradcheck.hpp"
#include "glcn/pipeline.hpp"

using namespace glcn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int criterion;
    bool pass;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion1_gradients() {
    const auto start = std::chrono::steady_clock::now();
    double worst = 0;
    std::string worst_name;
    for (const auto& r : gradcheck_layers())
        if (r.max_rel_error > worst) worst = r.max_rel_error, worst_name = r.name;
    for (const auto& r : gradcheck_networks())
        if (r.max_rel_error > worst) worst = r.max_rel_error, worst_name = r.name;
    const double elapsed = seconds_since(start);
    const bool pass = worst < 1e-4 && elapsed < 120.0;
    return {1, pass, cat("max rel error ", worst, " (", worst_name, "), ", int(elapsed), "s")};
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion2_auc_oracle() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(20260808);
    double worst = 0;
    for (int set = 0; set < 1000; ++set) {
        const std::int64_t n = rng.uniform_int(2, 200);
        std::vector<PredictionRecord> records;
        for (std::int64_t i = 0; i < n; ++i) {
            double s = rng.uniform();
            if (set % 2 == 0 && rng.uniform() < 0.35) s = std::floor(s * 6) / 6.0; // inject ties
            records.push_back({cat("l", i), cat("i", i), rng.uniform() < 0.5 ? 1 : 0, s});
        }
        records[0].label = 1;
        records[std::size_t(n - 1)].label = 0;
        double wins = 0;
        std::int64_t pairs = 0;
        for (const auto& p : records) {
            if (!p.label) continue;
            for (const auto& q : records) {
                if (q.label) continue;
                ++pairs;
                wins += p.score > q.score ? 1.0 : (p.score == q.score ? 0.5 : 0.0);
            }
        }
        worst = std::max(worst, std::abs(auc(records) - wins / double(pairs)));
    }
    const double elapsed = seconds_since(start);
    const bool pass = worst < 1e-12 && elapsed < 60.0;
    return {2, pass, cat("max |rank - brute| = ", worst, ", ", int(elapsed), "s")};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion3_maps() {
    Rng rng(33);
    std::string fail_detail;

    // Rotation-0 closed-form area oracle; integer-aligned windows.
    const std::int64_t H = 96, W = 64, gh = 6, gw = 4;
    const double tol = 1.0 / double((H / gh) * (W / gw));
    for (int t = 0; t < 500; ++t) {
        const std::int64_t side = rng.uniform_int(6, 48);
        Window w{double(rng.uniform_int(0, H - side)), double(rng.uniform_int(0, W - side)), side, 0};
        Tensor<double> ind = location_indicator<double>(w, H, W, gh, gw);
        for (std::int64_t i = 0; i < gh && fail_detail.empty(); ++i)
            for (std::int64_t j = 0; j < gw; ++j) {
                const double top = std::max(w.top, double(i * (H / gh)));
                const double bottom = std::min(w.top + double(w.side), double((i + 1) * (H / gh)));
                const double left = std::max(w.left, double(j * (W / gw)));
                const double right = std::min(w.left + double(w.side), double((j + 1) * (W / gw)));
                const double oracle = std::max(0.0, bottom - top) * std::max(0.0, right - left) /
                                      double((H / gh) * (W / gw));
                if (std::abs(ind.data[std::size_t(i * gw + j)] - oracle) > tol) {
                    fail_detail = cat("area oracle mismatch at cell (", i, ",", j, ")");
                    break;
                }
            }
        if (!fail_detail.empty()) break;
    }

    // Embedding support law.
    if (fail_detail.empty()) {
        for (int t = 0; t < 100 && fail_detail.empty(); ++t) {
            Tensor<double> ind({5, 4});
            for (auto& v : ind.data) v = rng.uniform() < 0.4 ? rng.uniform(0.01, 1.0) : 0.0;
            std::vector<double> h(32);
            for (auto& v : h) v = rng.uniform(-2.0, 2.0);
            Tensor<double> emb = embedding_map(ind, h);
            for (std::int64_t p = 0; p < 20; ++p)
                for (std::int64_t k = 0; k < 32; ++k) {
                    const double expect = ind.data[std::size_t(p)] > 0 ? h[std::size_t(k)] : 0.0;
                    if (emb.data[std::size_t(p * 32 + k)] != expect) {
                        fail_detail = "embedding support law violated";
                        break;
                    }
                }
        }
    }

    // Channel counts for every combination, including M = 34, and lossless
    // recovery through the legend.
    if (fail_detail.empty()) {
        Tensor<double> ind({5, 4});
        for (auto& v : ind.data) v = rng.uniform() < 0.5 ? rng.uniform(0.01, 1.0) : 0.0;
        SaliencyPair<double> sal;
        sal.malignant = Tensor<double>({5, 4});
        sal.benign = Tensor<double>({5, 4});
        for (auto& v : sal.malignant.data) v = rng.uniform();
        for (auto& v : sal.benign.data) v = rng.uniform();
        std::vector<double> h(32);
        for (auto& v : h) v = rng.uniform(-2.0, 2.0);
        Tensor<double> emb = embedding_map(ind, h);
        const std::pair<const char*, std::int64_t> combos[] = {
            {"indicator", 1},           {"saliency", 2},           {"indicator+saliency", 3},
            {"embedding", 32},          {"indicator+embedding", 33}, {"saliency+embedding", 34},
            {"indicator+saliency+embedding", 35}};
        for (const auto& [spec, m] : combos) {
            MapSelection sel = MapSelection::parse(spec);
            AssembledInput<double> x = assemble(sel, &ind, &sal, &emb);
            if (x.x.shape != Shape{5, 4, m} || std::int64_t(x.legend.size()) != m) {
                fail_detail = cat("channel count wrong for ", spec);
                break;
            }
            if (sel.indicator && extract_channel(x, "indicator").data != ind.data)
                fail_detail = "indicator not recoverable";
            if (sel.saliency && (extract_channel(x, "saliency_malignant").data != sal.malignant.data ||
                                 extract_channel(x, "saliency_benign").data != sal.benign.data))
                fail_detail = "saliency not recoverable";
            if (sel.embedding)
                for (std::int64_t k = 0; k < 32; ++k) {
                    Tensor<double> ch = extract_channel(x, cat("embedding_", k));
                    for (std::int64_t p = 0; p < 20; ++p)
                        if (ch.data[std::size_t(p)] != emb.data[std::size_t(p * 32 + k)])
                            fail_detail = "embedding channel not recoverable";
                }
            if (!fail_detail.empty()) break;
        }
    }
    return {3, fail_detail.empty(), fail_detail.empty() ? "area oracle + support law + M grid + recovery" : fail_detail};
}

// ---------------------------------------------------------------- criterion 4

ExperimentConfig acceptance_config() {
    ExperimentConfig cfg;
    cfg.seed = 20260808;
    cfg.threads = 0;
    cfg.dataset.height = 480;
    cfg.dataset.width = 320;
    cfg.dataset.grid_factor = 16;
    cfg.dataset.patients = 2700;
    cfg.dataset.biopsied_fraction = 0.8;
    cfg.dataset.lesion_count_probs = {0.60, 0.28, 0.12};
    cfg.dataset.ambiguous_fraction = 0.40;
    cfg.dataset.blob_fraction = 0.30;
    cfg.dataset.lesion_radius_min = 16.0;
    cfg.dataset.lesion_radius_max = 24.0;

    cfg.context_net.widths = {8, 16};
    cfg.context_net.pre_downsample = 4;
    cfg.context_net.grid_factor = 16;

    cfg.train_context.lr = 2e-3;
    cfg.train_context.batch_size = 8;
    cfg.train_context.max_epochs = 14;
    cfg.train_context.images_per_epoch = 320;
    cfg.train_context.val_lesion_sample = 128;

    cfg.train_local.lr = 1.5e-4;
    cfg.train_local.plan = EpochPlan{{448, 448, 64, 64}};
    cfg.train_local.max_epochs = 24;
    cfg.train_local.val_lesion_sample = 128;
    cfg.train_local.val_patches = 16;

    cfg.train_agg.lr = 4e-4;
    cfg.train_agg.plan = EpochPlan{{384, 384, 384, 384}};
    cfg.train_agg.max_epochs = 14;
    cfg.train_agg.val_lesion_sample = 96;
    cfg.train_agg.val_patches = 8;
    cfg.agg_pool_factor = 3;

    cfg.evaluation.patches_per_lesion = 100;
    cfg.evaluation.bootstrap_resamples = 250;
    cfg.validate();
    return cfg;
}

Outcome criterion4_fusion(const std::string& work) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentConfig cfg = acceptance_config();
    ThreadPool::instance().set_threads(cfg.threads > 0 ? cfg.threads
                                                       : int(std::thread::hardware_concurrency()));
    const std::string dir = work + "/fusion";
    fs::remove_all(dir);
    fs::create_directories(dir);

    DatasetManifest manifest = generate_dataset(cfg.dataset, cfg.seed, dir + "/data", true);
    const SplitCounts tr = DatasetManifest::count(manifest.train);
    const SplitCounts va = DatasetManifest::count(manifest.val);
    const SplitCounts te = DatasetManifest::count(manifest.test);
    std::int64_t ambiguous = 0;
    for (const auto* split : {&manifest.train, &manifest.val, &manifest.test})
        for (const auto& img : *split)
            for (const auto& les : img.lesions) ambiguous += les.morphology == Morphology::Ambiguous;
    const double amb_frac = double(ambiguous) / double(tr.lesions + va.lesions + te.lesions);
    std::printf("    dataset: %lld/%lld/%lld lesions, %.1f%% ambiguous\n", (long long)tr.lesions,
                (long long)va.lesions, (long long)te.lesions, 100 * amb_frac);
    if (tr.lesions < 2000 || va.lesions < 300 || te.lesions < 300 || amb_frac < 0.25)
        return {4, false, "dataset does not meet the size/ambiguity floor"};

    ImageStore store(dir + "/data");

    TrainConfig ctx_cfg = cfg.train_context;
    ctx_cfg.seed = derive_seed(cfg.seed, {tag("ctx")});
    TrainResult ctx = train_context(manifest, store, cfg.context_net, cfg.patch, ctx_cfg);
    if (!ctx.checkpoint) return {4, false, "context training failed"};
    save_checkpoint(dir + "/context.glcn", *ctx.checkpoint);
    ContextNet<float> context = ContextNet<float>::from_checkpoint(*ctx.checkpoint);
    std::printf("    context: best val AUC %.3f (%zu epochs, %.0fs)\n", ctx.report.best_val_auc,
                ctx.report.epochs.size(), ctx.report.wall_time_sec);

    TrainConfig loc_cfg = cfg.train_local;
    loc_cfg.seed = derive_seed(cfg.seed, {tag("loc")});
    TrainResult loc = train_local(manifest, store, cfg.local_net, cfg.patch, loc_cfg);
    if (!loc.checkpoint) return {4, false, "local training failed"};
    save_checkpoint(dir + "/local.glcn", *loc.checkpoint);
    LocalNet<float> local = LocalNet<float>::from_checkpoint(*loc.checkpoint);
    std::printf("    f_loc: best val AUC %.3f (%zu epochs, %.0fs)\n", loc.report.best_val_auc,
                loc.report.epochs.size(), loc.report.wall_time_sec);

    const std::string local_hash = sha256_file_hex(dir + "/local.glcn");
    const std::string context_hash = sha256_file_hex(dir + "/context.glcn");
    AggPool pool = build_agg_pool(manifest, store, local, context, cfg.patch, cfg.train_agg.plan,
                                  cfg.agg_pool_factor, derive_seed(cfg.seed, {tag("pool")}), local_hash,
                                  context_hash);
    save_agg_pool(pool, manifest, dir + "/agg_inputs");

    EvalCaches caches;
    const std::vector<std::uint64_t> seeds = {1, 2, 3};
    const std::vector<std::string> combos = {"saliency+embedding", "embedding", "saliency", "indicator"};
    std::vector<AblationRow> rows;
    for (const std::string& combo : combos) {
        MapSelection sel = MapSelection::parse(combo);
        std::vector<double> aucs;
        for (std::uint64_t s : seeds) {
            TrainConfig agg_cfg = cfg.train_agg;
            agg_cfg.selection = sel;
            agg_cfg.seed = derive_seed(cfg.seed, {tag("agg"), fnv1a64(combo), s});
            TrainResult agg_res = train_agg(manifest, store, pool, local, context, cfg.patch, agg_cfg);
            if (!agg_res.checkpoint) return {4, false, cat("agg training failed for ", combo)};
            save_checkpoint(cat(dir, "/agg_", combo, "_s", s, ".glcn"), *agg_res.checkpoint);
            AggNet<float> agg = AggNet<float>::from_checkpoint(*agg_res.checkpoint);
            EvalOutput out = evaluate_split(manifest, "test", store, local, &context, agg, sel, cfg.patch,
                                            cfg.evaluation, derive_seed(cfg.seed, {tag("eval")}), &caches);
            save_records(out.records, cat(dir, "/records_", combo, "_s", s, ".csv"));
            aucs.push_back(out.auc_value);
            std::printf("    %-20s seed %llu: test AUC %.4f (val %.3f, %zu epochs)\n", combo.c_str(),
                        (unsigned long long)s, out.auc_value, agg_res.report.best_val_auc,
                        agg_res.report.epochs.size());
        }
        rows.push_back(summarize_ablation_row(combo, aucs));
    }
    write_ablation_csv(rows, dir + "/ablation.csv");

    // Frozen-upstream property: the agg runs must not have touched the
    // local/context checkpoints.
    if (sha256_file_hex(dir + "/local.glcn") != local_hash ||
        sha256_file_hex(dir + "/context.glcn") != context_hash)
        return {4, false, "upstream checkpoints changed during agg training"};

    auto mean_of = [&](const std::string& combo) {
        for (const auto& r : rows)
            if (r.combo == MapSelection::parse(combo).name()) return r.mean_auc;
        return -1.0;
    };
    const double emb_sal = mean_of("saliency+embedding");
    const double emb = mean_of("embedding");
    const double sal = mean_of("saliency");
    const double ind = mean_of("indicator");
    const double elapsed = seconds_since(start);
    std::printf("    means: emb+sal %.4f | emb %.4f | sal %.4f | ind %.4f  (%.0fs total)\n", emb_sal,
                emb, sal, ind, elapsed);

    std::string detail = cat("emb+sal-emb = ", emb_sal - emb, ", sal<emb = ", sal < emb,
                             ", ind = ", ind, ", ", int(elapsed), "s");
    const bool pass = (emb_sal - emb >= 0.05) && (sal < emb) && (ind >= 0.4 && ind <= 0.6) &&
                      elapsed <= 2700.0;
    return {4, pass, detail};
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion5_protocol(const std::string& work) {
    // (a) Early stopping halts exactly at patience 10 on an injected sequence.
    std::vector<double> sequence = {0.6};
    for (int i = 0; i < 15; ++i) sequence.push_back(0.6 - 0.01 * (i % 3));
    int trained = 0;
    TrainReport report = early_stopping_loop(
        100, 10, [&](int) { ++trained; return 1.0; },
        [&](int epoch) { return sequence.at(std::size_t(epoch - 1)); }, [](int) {});
    if (trained != 11 || report.best_epoch != 1 || report.stopping_reason != "patience")
        return {5, false, cat("patience protocol: stopped after ", trained, " epochs, best ",
                              report.best_epoch)};

    // (b) Paper epoch plan and weights, verified arithmetically.
    EpochPlan plan = reference_epoch_plan();
    auto w = plan.weights();
    auto near = [](double a, double b) { return std::abs(a - b) < 1e-9; };
    if (plan.total() != 10000 || !near(w[0], 500.0) || !near(w[1], 10000.0 / 35.0) ||
        !near(w[2], 2.0) || !near(w[3], 10000.0 / 4945.0))
        return {5, false, "paper plan weights wrong"};
    if (std::abs(w[1] - 285.71428571428571) > 1e-8 || std::abs(w[3] - 2.0222446916076845) > 1e-12)
        return {5, false, "paper plan weight values drifted"};

    // (c) Evaluation draws exactly 100 windows per lesion, each overlapping
    // the mask; default settings use 100 patches.
    if (EvalSettings().patches_per_lesion != 100) return {5, false, "default patch count is not 100"};
    GeneratorConfig gen;
    gen.height = 192;
    gen.width = 128;
    gen.patients = 6;
    gen.suppress_r0 = 60;
    gen.suppress_r1 = 80;
    const std::string dir = work + "/protocol";
    fs::remove_all(dir);
    DatasetManifest manifest = generate_dataset(gen, 3, dir);
    ImageStore store(dir);
    PatchGeometry geo;
    geo.side_min = 16;
    geo.side_max = 48;
    geo.resolution = 32;
    PatchSampler sampler(manifest, "train", store, geo);
    int lesions_checked = 0;
    for (const auto& img : manifest.train) {
        for (const auto& les : img.lesions) {
            Rng rng = derive_rng(9, {tag("lesion-patches"), fnv1a64(les.id)});
            auto patches = sampler.sample_lesion_patches(img, les, 100, rng);
            if (patches.size() != 100) return {5, false, "patch count != 100"};
            for (const auto& p : patches)
                if (!window_overlaps_mask(p.window, les.mask))
                    return {5, false, "evaluation window without mask overlap"};
            ++lesions_checked;
        }
        if (lesions_checked >= 4) break;
    }
    if (lesions_checked == 0) return {5, false, "no lesions generated for the protocol check"};
    return {5, true, "patience, plan weights, 100-patch evaluation"};
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion6_tnr_fnr() {
    Rng rng(66);
    for (int t = 0; t < 400; ++t) {
        const std::int64_t n = rng.uniform_int(2, 50);
        std::vector<PredictionRecord> records;
        for (std::int64_t i = 0; i < n; ++i) {
            double s = rng.uniform();
            if (t % 3 == 0 && rng.uniform() < 0.4) s = std::floor(s * 5) / 5.0;
            records.push_back({cat("l", i), cat("i", i), rng.uniform() < 0.5 ? 1 : 0, s});
        }
        records[0].label = 1;
        records[std::size_t(n - 1)].label = 0;
        std::int64_t pos_total = 0, neg_total = 0;
        for (const auto& r : records) (r.label ? pos_total : neg_total)++;

        double prev_tnr = -1;
        for (double f : {0.0, 0.01, 0.02, 0.03, 0.05, 0.1, 0.25, 0.5, 0.75}) {
            OperatingPoint got = tnr_at_fnr(records, f);
            if (got.tnr < prev_tnr) return {6, false, "TNR not nondecreasing in the FNR target"};
            prev_tnr = got.tnr;
            // Exhaustive enumeration over observed scores.
            double best_t = -std::numeric_limits<double>::infinity();
            for (const auto& cand : records) {
                std::int64_t missed = 0;
                for (const auto& r : records)
                    if (r.label && r.score < cand.score) ++missed;
                if (double(missed) / double(pos_total) <= f) best_t = std::max(best_t, cand.score);
            }
            std::int64_t avoided = 0, missed = 0;
            for (const auto& r : records) {
                if (!r.label && r.score < best_t) ++avoided;
                if (r.label && r.score < best_t) ++missed;
            }
            if (got.threshold != best_t || std::abs(got.tnr - double(avoided) / double(neg_total)) > 1e-12 ||
                got.achieved_fnr > f + 1e-12 ||
                std::abs(got.achieved_fnr - double(missed) / double(pos_total)) > 1e-12)
                return {6, false, cat("enumeration mismatch at set ", t, " fnr ", f)};
        }
    }
    return {6, true, "monotone and enumeration-exact on 400 record sets"};
}

// ---------------------------------------------------------------- criterion 7

ExperimentConfig micro_config() {
    ExperimentConfig cfg;
    cfg.seed = 99;
    cfg.dataset.height = 192;
    cfg.dataset.width = 128;
    cfg.dataset.patients = 80;
    cfg.dataset.lesion_radius_min = 8;
    cfg.dataset.lesion_radius_max = 12;
    cfg.dataset.suppress_r0 = 60;
    cfg.dataset.suppress_r1 = 80;
    cfg.patch.side_min = 16;
    cfg.patch.side_max = 48;
    cfg.patch.resolution = 32;
    cfg.local_net.widths = {4, 8};
    cfg.local_net.resolution = 32;
    cfg.context_net.widths = {4, 6, 8, 8};
    cfg.context_net.pre_downsample = 1;
    cfg.train_context.max_epochs = 2;
    cfg.train_context.images_per_epoch = 10;
    cfg.train_context.batch_size = 5;
    cfg.train_context.val_lesion_sample = 10;
    cfg.train_local.max_epochs = 2;
    cfg.train_local.plan = EpochPlan{{10, 10, 10, 10}};
    cfg.train_local.val_lesion_sample = 10;
    cfg.train_local.val_patches = 3;
    cfg.train_agg.max_epochs = 2;
    cfg.train_agg.plan = EpochPlan{{8, 8, 8, 8}};
    cfg.train_agg.batch_size = 16;
    cfg.train_agg.val_lesion_sample = 10;
    cfg.train_agg.val_patches = 3;
    cfg.agg_pool_factor = 2;
    cfg.evaluation.patches_per_lesion = 5;
    cfg.evaluation.bootstrap_resamples = 100;
    cfg.validate();
    return cfg;
}

// One full micro pipeline; returns the bytes of every metric file.
std::map<std::string, std::string> run_micro_pipeline(const std::string& dir) {
    ExperimentConfig cfg = micro_config();
    fs::remove_all(dir);
    fs::create_directories(dir);
    DatasetManifest manifest = generate_dataset(cfg.dataset, cfg.seed, dir + "/data", true);
    ImageStore store(dir + "/data");

    TrainConfig ctx_cfg = cfg.train_context;
    ctx_cfg.seed = derive_seed(cfg.seed, {tag("ctx")});
    TrainResult ctx = train_context(manifest, store, cfg.context_net, cfg.patch, ctx_cfg);
    GLCN_CHECK(ctx.checkpoint.has_value(), "micro context training failed: ", ctx.report.error_message);
    save_checkpoint(dir + "/context.glcn", *ctx.checkpoint);
    ContextNet<float> context = ContextNet<float>::from_checkpoint(*ctx.checkpoint);

    TrainConfig loc_cfg = cfg.train_local;
    loc_cfg.seed = derive_seed(cfg.seed, {tag("loc")});
    TrainResult loc = train_local(manifest, store, cfg.local_net, cfg.patch, loc_cfg);
    GLCN_CHECK(loc.checkpoint.has_value(), "micro local training failed: ", loc.report.error_message);
    save_checkpoint(dir + "/local.glcn", *loc.checkpoint);
    LocalNet<float> local = LocalNet<float>::from_checkpoint(*loc.checkpoint);

    AggPool pool = build_agg_pool(manifest, store, local, context, cfg.patch, cfg.train_agg.plan,
                                  cfg.agg_pool_factor, derive_seed(cfg.seed, {tag("pool")}),
                                  sha256_file_hex(dir + "/local.glcn"),
                                  sha256_file_hex(dir + "/context.glcn"));
    TrainConfig agg_cfg = cfg.train_agg;
    agg_cfg.selection = MapSelection::parse("saliency+embedding");
    agg_cfg.seed = derive_seed(cfg.seed, {tag("agg")});
    TrainResult agg_res = train_agg(manifest, store, pool, local, context, cfg.patch, agg_cfg);
    GLCN_CHECK(agg_res.checkpoint.has_value(), "micro agg training failed: ", agg_res.report.error_message);
    save_checkpoint(dir + "/agg.glcn", *agg_res.checkpoint);
    AggNet<float> agg = AggNet<float>::from_checkpoint(*agg_res.checkpoint);

    EvalCaches caches;
    EvalOutput out = evaluate_split(manifest, "test", store, local, &context, agg,
                                    agg_cfg.selection, cfg.patch, cfg.evaluation,
                                    derive_seed(cfg.seed, {tag("eval")}), &caches);
    save_records(out.records, dir + "/records.csv");
    write_json(metrics_to_json(out), dir + "/metrics.json");
    std::vector<double> targets;
    for (double f = 0; f <= 0.1 + 1e-9; f += 0.01) targets.push_back(f);
    write_curve_csv(tnr_fnr_curve(out.records, targets), dir + "/curve.csv");

    std::map<std::string, std::string> bytes;
    for (const char* name : {"data/manifest.json", "context.glcn", "local.glcn", "agg.glcn",
                             "records.csv", "metrics.json", "curve.csv"}) {
        std::ifstream f(dir + "/" + name, std::ios::binary);
        bytes[name] = std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (bytes[name].empty()) bytes[name] = "<missing>";
    }
    return bytes;
}

Outcome criterion7_reproducibility(const std::string& work) {
    auto a = run_micro_pipeline(work + "/repro_a");
    auto b = run_micro_pipeline(work + "/repro_b");
    for (const auto& [name, bytes] : a) {
        if (bytes == "<missing>") return {7, false, cat(name, " missing")};
        if (b.at(name) != bytes) return {7, false, cat(name, " differs between reruns")};
    }

    // Checkpoint round-trip preserves forward outputs bit-exactly.
    LocalNet<float> net = LocalNet<float>::from_checkpoint(load_checkpoint(work + "/repro_a/local.glcn"));
    Rng rng(5);
    Tensor<float> patch({1, 32, 32, 1});
    for (auto& v : patch.data) v = float(rng.uniform());
    Tensor<float> before = net.logits_batch(patch);
    save_checkpoint(work + "/repro_a/rt.glcn", net.to_checkpoint());
    LocalNet<float> loaded = LocalNet<float>::from_checkpoint(load_checkpoint(work + "/repro_a/rt.glcn"));
    Tensor<float> after = loaded.logits_batch(patch);
    if (before.data != after.data) return {7, false, "checkpoint round-trip changed forward outputs"};
    return {7, true, "pipeline rerun bit-identical; checkpoint round-trip exact"};
}

} // namespace

int main(int argc, char** argv) try {
    std::set<int> only;
    std::string work = "acceptance_work";
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            std::string list = argv[++i];
            for (char c : list)
                if (c >= '1' && c <= '7') only.insert(c - '0');
        } else if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) {
            work = argv[++i];
        }
    }
    fs::create_directories(work);
    ThreadPool::instance().set_threads(int(std::thread::hardware_concurrency()));

    const char* names[] = {"",
                           "gradient suite (fd oracle, <2min)",
                           "AUC rank form vs pairwise oracle",
                           "map assembly suite",
                           "fusion benefit over 3 seeds (<=45min)",
                           "training/evaluation protocol conformance",
                           "TNR-FNR monotonicity and enumeration",
                           "bit-exact reproducibility"};
    std::vector<Outcome> outcomes;
    auto want = [&](int c) { return only.empty() || only.count(c); };
    if (want(1)) outcomes.push_back(criterion1_gradients());
    if (want(2)) outcomes.push_back(criterion2_auc_oracle());
    if (want(3)) outcomes.push_back(criterion3_maps());
    if (want(4)) outcomes.push_back(criterion4_fusion(work));
    if (want(5)) outcomes.push_back(criterion5_protocol(work));
    if (want(6)) outcomes.push_back(criterion6_tnr_fnr());
    if (want(7)) outcomes.push_back(criterion7_reproducibility(work));

    int failures = 0;
    for (const auto& o : outcomes) {
        std::printf("[%s] criterion %d: %s -- %s\n", o.pass ? "PASS" : "FAIL", o.criterion,
                    names[o.criterion], o.detail.c_str());
        failures += !o.pass;
    }
    return failures;
} catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 99;
}
