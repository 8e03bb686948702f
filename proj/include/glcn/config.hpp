#pragma once

// Experiment configuration: one JSON file describes the dataset, geometry,
// per-target training settings and the evaluation protocol. Flags override
// fields; the canonical dump is hashed into every run manifest.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glcn/context_net.hpp"
#include "glcn/local_net.hpp"
#include "glcn/patches.hpp"
#include "glcn/sha256.hpp"
#include "glcn/synth.hpp"
#include "glcn/trainer.hpp"

namespace glcn {

struct EvalSettings {
    int patches_per_lesion = 100;
    std::vector<double> fnr_targets = {0.0, 0.01, 0.02, 0.03, 0.05};
    std::int64_t bootstrap_resamples = 1000;
    double bootstrap_level = 0.95;

    nlohmann::json to_json() const {
        return {{"patches_per_lesion", patches_per_lesion},
                {"fnr_targets", fnr_targets},
                {"bootstrap_resamples", bootstrap_resamples},
                {"bootstrap_level", bootstrap_level}};
    }
    static EvalSettings from_json(const nlohmann::json& j) {
        EvalSettings e;
        e.patches_per_lesion = j.value("patches_per_lesion", e.patches_per_lesion);
        if (j.contains("fnr_targets")) e.fnr_targets = j.at("fnr_targets").get<std::vector<double>>();
        e.bootstrap_resamples = j.value("bootstrap_resamples", e.bootstrap_resamples);
        e.bootstrap_level = j.value("bootstrap_level", e.bootstrap_level);
        return e;
    }
};

struct ExperimentConfig {
    GeneratorConfig dataset;
    PatchGeometry patch;
    ContextNetConfig context_net;
    LocalNetConfig local_net;
    TrainConfig train_context;
    TrainConfig train_local;
    TrainConfig train_agg;
    EvalSettings evaluation;
    std::uint64_t seed = 1;
    int threads = 0; // 0 = hardware concurrency
    std::int64_t agg_pool_factor = 4;

    ExperimentConfig() {
        train_context.lr = 2e-3;
        train_context.batch_size = 8;
        train_context.max_epochs = 30;
        train_agg.lr = 2e-3;
        train_agg.batch_size = 100;
        train_agg.max_epochs = 25;
        train_agg.selection = MapSelection::parse("saliency+embedding");
        train_agg.val_lesion_sample = 96;
        train_agg.val_patches = 8;
        train_agg.lr_search_lo = 1e-5;
        train_agg.lr_search_hi = 1e-3;
    }

    void validate() const {
        dataset.validate();
        patch.validate(dataset.height, dataset.width);
        context_net.validate();
        local_net.validate();
        GLCN_CHECK(context_net.grid_factor == dataset.grid_factor, "context grid factor ",
                   context_net.grid_factor, " != dataset grid factor ", dataset.grid_factor);
        GLCN_CHECK(patch.resolution == local_net.resolution, "patch resolution ", patch.resolution,
                   " != local net resolution ", local_net.resolution);
        GLCN_CHECK(evaluation.patches_per_lesion >= 1, "need at least one evaluation patch");
        for (std::size_t i = 1; i < evaluation.fnr_targets.size(); ++i)
            GLCN_CHECK(evaluation.fnr_targets[i - 1] < evaluation.fnr_targets[i],
                       "FNR targets must be sorted ascending");
    }

    nlohmann::json to_json() const {
        return {{"dataset", dataset.to_json()},
                {"patch", patch.to_json()},
                {"context_net", context_net.to_json()},
                {"local_net", local_net.to_json()},
                {"train_context", train_context.to_json()},
                {"train_local", train_local.to_json()},
                {"train_agg", train_agg.to_json()},
                {"evaluation", evaluation.to_json()},
                {"seed", seed},
                {"threads", threads},
                {"agg_pool_factor", agg_pool_factor}};
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        if (j.contains("dataset")) c.dataset = GeneratorConfig::from_json(j.at("dataset"));
        if (j.contains("patch")) c.patch = PatchGeometry::from_json(j.at("patch"));
        if (j.contains("context_net")) c.context_net = ContextNetConfig::from_json(j.at("context_net"));
        if (j.contains("local_net")) c.local_net = LocalNetConfig::from_json(j.at("local_net"));
        if (j.contains("train_context"))
            c.train_context = TrainConfig::from_json(j.at("train_context"), c.train_context);
        if (j.contains("train_local"))
            c.train_local = TrainConfig::from_json(j.at("train_local"), c.train_local);
        if (j.contains("train_agg")) c.train_agg = TrainConfig::from_json(j.at("train_agg"), c.train_agg);
        if (j.contains("evaluation")) c.evaluation = EvalSettings::from_json(j.at("evaluation"));
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        c.agg_pool_factor = j.value("agg_pool_factor", c.agg_pool_factor);
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError(cat("config file not found: ", path));
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(cat("config parse error in ", path, ": ", e.what()));
        }
        ExperimentConfig c;
        try {
            c = from_json(j);
            c.validate();
        } catch (const Error& e) {
            throw ConfigError(cat("invalid config ", path, ": ", e.what()));
        }
        return c;
    }

    std::string hash() const { return sha256_hex(to_json().dump()); }
};

} // namespace glcn
