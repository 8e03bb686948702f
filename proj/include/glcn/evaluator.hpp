#pragma once

// Lesion-level inference and metrics: the 100-patch scoring protocol, AUC
// (rank form of the Mann-Whitney statistic), TNR at a fixed FNR target,
// bootstrap confidence intervals, and the TNR-FNR curve.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "glcn/agg_net.hpp"
#include "glcn/context_net.hpp"
#include "glcn/local_net.hpp"
#include "glcn/patches.hpp"

namespace glcn {

struct PredictionRecord {
    std::string lesion_id;
    std::string image_id;
    int label = 0; // benign=0, malignant=1
    double score = 0;
};

// Mann-Whitney AUC via average ranks; ties count half.
inline double auc(const std::vector<PredictionRecord>& records) {
    std::int64_t pos = 0, neg = 0;
    for (const auto& r : records) (r.label ? pos : neg)++;
    GLCN_CHECK(pos >= 1 && neg >= 1, "AUC requires at least one record of each class, got ", pos,
               " positive / ", neg, " negative");
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].score < records[b].score;
    });
    double rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && records[order[j]].score == records[order[i]].score) ++j;
        const double avg_rank = 0.5 * double(i + 1 + j); // average of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (records[order[k]].label) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - double(pos) * double(pos + 1) / 2.0;
    return u / (double(pos) * double(neg));
}

struct OperatingPoint {
    double fnr_target = 0;
    double achieved_fnr = 0;
    double tnr = 0;
    double threshold = 0;
    double ci_low = 0, ci_high = 0; // filled by callers that bootstrap
};

// threshold = largest t with #(malignant scores < t)/P <= target; records
// scoring strictly below t are the avoided biopsies. A score exactly at the
// threshold is not avoided.
inline OperatingPoint tnr_at_fnr(const std::vector<PredictionRecord>& records, double fnr_target) {
    GLCN_CHECK(fnr_target >= 0 && fnr_target <= 1, "FNR target must be in [0,1]");
    std::vector<double> pos, neg;
    for (const auto& r : records) (r.label ? pos : neg).push_back(r.score);
    GLCN_CHECK(!pos.empty() && !neg.empty(), "operating point requires both classes");
    std::sort(pos.begin(), pos.end());
    const auto p = std::int64_t(pos.size());
    const auto allowed = std::int64_t(std::floor(fnr_target * double(p) + 1e-12));
    OperatingPoint op;
    op.fnr_target = fnr_target;
    op.threshold = allowed >= p ? std::numeric_limits<double>::infinity() : pos[std::size_t(allowed)];
    std::int64_t missed = 0;
    for (double s : pos) missed += s < op.threshold;
    std::int64_t avoided = 0;
    for (double s : neg) avoided += s < op.threshold;
    op.achieved_fnr = double(missed) / double(p);
    op.tnr = double(avoided) / double(neg.size());
    return op;
}

inline std::vector<OperatingPoint> tnr_fnr_curve(const std::vector<PredictionRecord>& records,
                                                 const std::vector<double>& fnr_targets) {
    std::vector<OperatingPoint> curve;
    for (double f : fnr_targets) curve.push_back(tnr_at_fnr(records, f));
    return curve;
}

// Nonparametric percentile bootstrap over lesions, resampling with
// replacement; resamples that lose one class entirely are redrawn.
inline std::pair<double, double> bootstrap_ci(
    const std::vector<PredictionRecord>& records,
    const std::function<double(const std::vector<PredictionRecord>&)>& statistic,
    std::int64_t resamples, double level, std::uint64_t seed) {
    GLCN_CHECK(resamples >= 100, "bootstrap needs at least 100 resamples");
    GLCN_CHECK(level > 0 && level < 1, "confidence level must be in (0,1)");
    Rng rng = derive_rng(seed, {tag("bootstrap")});
    const std::int64_t n = std::int64_t(records.size());
    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(resamples));
    std::vector<PredictionRecord> sample(records.size());
    for (std::int64_t b = 0; b < resamples; ++b) {
        bool ok = false;
        for (int retry = 0; retry < 100 && !ok; ++retry) {
            bool pos = false, neg = false;
            for (std::int64_t i = 0; i < n; ++i) {
                sample[std::size_t(i)] = records[std::size_t(rng.uniform_int(0, n - 1))];
                (sample[std::size_t(i)].label ? pos : neg) = true;
            }
            ok = pos && neg;
        }
        GLCN_CHECK(ok, "bootstrap could not draw a two-class resample");
        stats.push_back(statistic(sample));
    }
    std::sort(stats.begin(), stats.end());
    const double alpha = 1.0 - level;
    auto lo_idx = std::int64_t(std::floor(alpha / 2 * double(resamples)));
    auto hi_idx = std::int64_t(std::ceil((1.0 - alpha / 2) * double(resamples))) - 1;
    lo_idx = std::clamp<std::int64_t>(lo_idx, 0, resamples - 1);
    hi_idx = std::clamp<std::int64_t>(hi_idx, 0, resamples - 1);
    return {stats[std::size_t(lo_idx)], stats[std::size_t(hi_idx)]};
}

// ---------------------------------------------------------------------------
// Records persistence: delimited text, 17 significant digits.

inline void save_records(const std::vector<PredictionRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail("cannot write records: ", path);
    f << "lesion_id,image_id,label,score\n";
    char buf[64];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%.17g", r.score);
        f << r.lesion_id << "," << r.image_id << "," << r.label << "," << buf << "\n";
    }
}

inline std::vector<PredictionRecord> load_records(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifactError(cat("records file not found: ", path));
    std::vector<PredictionRecord> out;
    std::string line;
    std::getline(f, line); // header
    GLCN_CHECK(line == "lesion_id,image_id,label,score", "unexpected records header in ", path);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        PredictionRecord r;
        std::size_t a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
        GLCN_CHECK(a != std::string::npos && b != std::string::npos && c != std::string::npos,
                   "malformed records line: ", line);
        r.lesion_id = line.substr(0, a);
        r.image_id = line.substr(a + 1, b - a - 1);
        r.label = std::stoi(line.substr(b + 1, c - b - 1));
        r.score = std::stod(line.substr(c + 1));
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lesion scoring

// Shared per-process caches: saliency per image (valid for one context
// net) and patch embeddings per lesion (valid for one local net and one
// evaluation seed / patch count).
struct SaliencyCache {
    std::unordered_map<std::string, SaliencyPair<float>> by_image;
    const SaliencyPair<float>& get(ContextNet<float>& net, const ImageInfo& info, ImageStore& store) {
        auto it = by_image.find(info.id);
        if (it != by_image.end()) return it->second;
        const RasterImage& raster = store.get(info);
        Tensor<float> img({info.height, info.width, 1}, std::vector<float>(raster.pixels));
        return by_image.emplace(info.id, net.saliency_forward(img)).first->second;
    }
};

struct EmbeddingCache {
    std::unordered_map<std::string, Tensor<float>> by_lesion; // [n,32]
};

struct LesionScorerConfig {
    MapSelection selection;
    int patches_per_lesion = 100;
    std::uint64_t eval_seed = 1;
    std::int64_t grid_h = 23, grid_w = 15;
};

// Full two-stage scorer: f_loc embeddings + assembled maps + f_agg.
class LesionScorer {
public:
    LesionScorer(LocalNet<float>& local, ContextNet<float>* context, AggNet<float>& agg,
                 LesionScorerConfig cfg, SaliencyCache* sal_cache = nullptr,
                 EmbeddingCache* emb_cache = nullptr)
        : local_(&local), context_(context), agg_(&agg), cfg_(cfg), sal_cache_(sal_cache),
          emb_cache_(emb_cache) {
        GLCN_CHECK(cfg_.selection.any(), "scorer needs a map selection");
        GLCN_CHECK(agg.config().input_channels == cfg_.selection.channels(),
                   "aggregation checkpoint M=", agg.config().input_channels,
                   " incompatible with selection '", cfg_.selection.name(), "' (M=",
                   cfg_.selection.channels(), ")");
        if (cfg_.selection.saliency)
            GLCN_CHECK(context_ != nullptr, "selection includes saliency but no context net given");
    }

    // Mean over patches of softmax-malignant / (softmax-malignant + softmax-benign).
    double score(PatchSampler& sampler, ImageStore& store, const ImageInfo& img,
                 const LesionInfo& lesion) {
        Rng rng = derive_rng(cfg_.eval_seed, {tag("lesion-patches"), fnv1a64(lesion.id)});
        const int n = cfg_.patches_per_lesion;
        std::vector<PatchSample> patches = sampler.sample_lesion_patches(img, lesion, n, rng);

        // Embeddings, cached per lesion when a cache is attached.
        Tensor<float> h;
        if (cfg_.selection.embedding) {
            if (emb_cache_) {
                auto it = emb_cache_->by_lesion.find(lesion.id);
                if (it != emb_cache_->by_lesion.end()) h = it->second;
            }
            if (h.numel() == 0) {
                const std::int64_t s = sampler.geometry().resolution;
                Tensor<float> batch({n, s, s, 1});
                for (int i = 0; i < n; ++i)
                    std::copy(patches[std::size_t(i)].pixels.data.begin(),
                              patches[std::size_t(i)].pixels.data.end(),
                              batch.data.begin() + std::size_t(i) * std::size_t(s * s));
                h = local_->embed_batch(batch);
                if (emb_cache_) emb_cache_->by_lesion.emplace(lesion.id, h);
            }
        }

        const SaliencyPair<float>* sal = nullptr;
        SaliencyPair<float> sal_local;
        if (cfg_.selection.saliency) {
            if (sal_cache_) {
                sal = &sal_cache_->get(*context_, img, store);
            } else {
                const RasterImage& raster = store.get(img);
                Tensor<float> image({img.height, img.width, 1}, std::vector<float>(raster.pixels));
                sal_local = context_->saliency_forward(image);
                sal = &sal_local;
            }
        }

        // Assemble X for every patch and run f_agg in one batch.
        const std::int64_t m = cfg_.selection.channels();
        Tensor<float> xs({n, cfg_.grid_h, cfg_.grid_w, m});
        for (int i = 0; i < n; ++i) {
            Tensor<float> ind = location_indicator<float>(patches[std::size_t(i)].window, img.height,
                                                          img.width, cfg_.grid_h, cfg_.grid_w);
            Tensor<float> emb;
            if (cfg_.selection.embedding) {
                std::vector<float> hi(h.data.begin() + std::size_t(i) * 32,
                                      h.data.begin() + std::size_t(i + 1) * 32);
                emb = embedding_map(ind, hi);
            }
            AssembledInput<float> x = assemble(cfg_.selection, &ind, sal, emb.numel() ? &emb : nullptr);
            std::copy(x.x.data.begin(), x.x.data.end(),
                      xs.data.begin() + std::size_t(i) * std::size_t(cfg_.grid_h * cfg_.grid_w * m));
        }
        Tensor<float> logits = agg_->logits_batch(xs);
        return mean_normalized_malignant(logits);
    }

    // Shared by the f_loc-only scorer below.
    static double mean_normalized_malignant(const Tensor<float>& logits) {
        const std::int64_t n = logits.shape[0];
        Tensor<float> sm = softmax_rows(logits);
        double total = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double pm = sm.data[std::size_t(i * 4 + 0)];
            const double pb = sm.data[std::size_t(i * 4 + 1)];
            total += pm / (pm + pb); // softmax entries are strictly positive
        }
        return total / double(n);
    }

private:
    LocalNet<float>* local_;
    ContextNet<float>* context_;
    AggNet<float>* agg_;
    LesionScorerConfig cfg_;
    SaliencyCache* sal_cache_;
    EmbeddingCache* emb_cache_;
};

// f_loc-only lesion score: the paper's architecture-sweep protocol, also
// used as the training-time validation metric for the local net.
inline double floc_lesion_score(LocalNet<float>& local, PatchSampler& sampler, const ImageInfo& img,
                                const LesionInfo& lesion, int n, std::uint64_t eval_seed) {
    Rng rng = derive_rng(eval_seed, {tag("lesion-patches"), fnv1a64(lesion.id)});
    std::vector<PatchSample> patches = sampler.sample_lesion_patches(img, lesion, n, rng);
    const std::int64_t s = sampler.geometry().resolution;
    Tensor<float> batch({std::int64_t(n), s, s, 1});
    for (int i = 0; i < n; ++i)
        std::copy(patches[std::size_t(i)].pixels.data.begin(), patches[std::size_t(i)].pixels.data.end(),
                  batch.data.begin() + std::size_t(i) * std::size_t(s * s));
    return LesionScorer::mean_normalized_malignant(local.logits_batch(batch));
}

// Context-only lesion score: every lesion in an image inherits the image's
// normalized malignant score from the pooled saliency maps.
inline double context_lesion_score(ContextNet<float>& net, SaliencyCache& cache, ImageStore& store,
                                   const ImageInfo& img) {
    const SaliencyPair<float>& sal = cache.get(net, img, store);
    auto [pm, pb] = image_scores(sal, net.config().pool_fraction);
    return double(pm) / (double(pm) + double(pb) + 1e-12);
}

} // namespace glcn
