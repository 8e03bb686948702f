#pragma once

// End-to-end orchestration shared by the CLI and the acceptance suite:
// evaluation of one model triple over a split, metrics files, the
// TNR-FNR curve, and the map-combination ablation.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "glcn/config.hpp"
#include "glcn/evaluator.hpp"
#include "glcn/pipeline_caches.hpp"

namespace glcn {

struct EvalOutput {
    std::vector<PredictionRecord> records;
    double auc_value = 0;
    std::vector<OperatingPoint> points;
};

// Scores every lesion of a split with the full two-stage model.
inline EvalOutput evaluate_split(const DatasetManifest& manifest, const std::string& split,
                                 ImageStore& store, LocalNet<float>& local, ContextNet<float>* context,
                                 AggNet<float>& agg, const MapSelection& selection,
                                 const PatchGeometry& geo, const EvalSettings& eval,
                                 std::uint64_t eval_seed, EvalCaches* caches = nullptr) {
    const std::vector<ImageInfo>& images = manifest.split(split);
    GLCN_CHECK(!images.empty(), "split '", split, "' is empty");
    PatchSampler sampler(manifest, split, store, geo);

    LesionScorerConfig scfg;
    scfg.selection = selection;
    scfg.patches_per_lesion = eval.patches_per_lesion;
    scfg.eval_seed = eval_seed;
    const nlohmann::json& echo = manifest.config_echo;
    const std::int64_t factor = echo.at("grid_factor").get<std::int64_t>();
    scfg.grid_h = images[0].height / factor;
    scfg.grid_w = images[0].width / factor;

    LesionScorer scorer(local, context, agg, scfg, caches ? &caches->saliency : nullptr,
                        caches ? &caches->embeddings : nullptr);
    EvalOutput out;
    for (const ImageInfo& img : images) {
        for (const LesionInfo& les : img.lesions) {
            PredictionRecord r;
            r.lesion_id = les.id;
            r.image_id = img.id;
            r.label = les.label == LesionLabel::Malignant ? 1 : 0;
            r.score = scorer.score(sampler, store, img, les);
            out.records.push_back(std::move(r));
        }
    }
    out.auc_value = auc(out.records);
    for (double f : eval.fnr_targets) {
        OperatingPoint op = tnr_at_fnr(out.records, f);
        auto [lo, hi] = bootstrap_ci(
            out.records, [f](const std::vector<PredictionRecord>& rs) { return tnr_at_fnr(rs, f).tnr; },
            eval.bootstrap_resamples, eval.bootstrap_level, eval_seed);
        op.ci_low = lo;
        op.ci_high = hi;
        out.points.push_back(op);
    }
    return out;
}

inline nlohmann::json metrics_to_json(const EvalOutput& out) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : out.points)
        points.push_back({{"fnr_target", p.fnr_target},
                          {"achieved_fnr", p.achieved_fnr},
                          {"tnr", p.tnr},
                          {"threshold", p.threshold},
                          {"ci_low", p.ci_low},
                          {"ci_high", p.ci_high}});
    return {{"auc", out.auc_value}, {"lesions", out.records.size()}, {"operating_points", points}};
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail("cannot write ", path);
    f << j.dump(1) << "\n";
}

inline void write_curve_csv(const std::vector<OperatingPoint>& curve, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail("cannot write ", path);
    f << "fnr_target,achieved_fnr,tnr,threshold\n";
    char buf[160];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", p.fnr_target, p.achieved_fnr, p.tnr,
                      p.threshold);
        f << buf;
    }
}

// ---------------------------------------------------------------------------
// Ablation: one row per map combination, mean and std of the AUC across
// training seeds. Rows with missing checkpoints are marked absent and the
// run continues.

struct AblationRow {
    std::string combo;
    bool present = false;
    double mean_auc = 0;
    double std_auc = 0;
    std::vector<double> seed_aucs;
};

inline const std::vector<std::string>& ablation_combos() {
    static const std::vector<std::string> combos = {
        "indicator",           "embedding",           "saliency",
        "indicator+embedding", "indicator+saliency",  "saliency+embedding",
        "indicator+saliency+embedding"};
    return combos;
}

inline AblationRow summarize_ablation_row(const std::string& combo, const std::vector<double>& aucs) {
    AblationRow row;
    row.combo = combo;
    row.seed_aucs = aucs;
    if (aucs.empty()) return row;
    row.present = true;
    double mean = 0;
    for (double a : aucs) mean += a;
    mean /= double(aucs.size());
    double var = 0;
    for (double a : aucs) var += (a - mean) * (a - mean);
    row.mean_auc = mean;
    row.std_auc = aucs.size() > 1 ? std::sqrt(var / double(aucs.size() - 1)) : 0.0;
    return row;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail("cannot write ", path);
    f << "combo,present,mean_auc,std_auc,seed_aucs\n";
    char buf[64];
    for (const auto& r : rows) {
        f << r.combo << "," << (r.present ? 1 : 0) << ",";
        std::snprintf(buf, sizeof buf, "%.17g", r.mean_auc);
        f << buf << ",";
        std::snprintf(buf, sizeof buf, "%.17g", r.std_auc);
        f << buf << ",";
        for (std::size_t i = 0; i < r.seed_aucs.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", r.seed_aucs[i]);
            f << (i ? ";" : "") << buf;
        }
        f << "\n";
    }
}

// Run manifest written next to every command's outputs: inputs are named
// by digest so a directory is self-describing.
inline void write_run_manifest(const std::string& dir, const std::string& command,
                               const std::string& config_hash, std::uint64_t seed,
                               const std::map<std::string, std::string>& input_hashes,
                               const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["inputs"] = input_hashes;
    j["outputs"] = outputs;
    write_json(j, dir + "/run_manifest.json");
}

} // namespace glcn
