#pragma once

// Training orchestration: weighted cross-entropy batches under Adam, early
// stopping on validation lesion-level AUC (strict improvement, patience in
// epochs), log-uniform learning-rate search, and the precomputed input
// cache for aggregation-network training (f_loc and the context net stay
// frozen while f_agg trains).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "glcn/evaluator.hpp"

namespace glcn {

struct TrainConfig {
    double lr = 1.5e-3;
    std::int64_t batch_size = 25; // paper defaults: 25 for f_loc, 100 for f_agg
    EpochPlan plan{{128, 128, 384, 384}};
    int patience = 10;
    int max_epochs = 40;
    std::uint64_t seed = 1;
    MapSelection selection; // agg only

    // Validation protocol during training.
    int val_lesion_sample = 128; // 0 = every validation lesion
    int val_patches = 16;

    // Context-net specifics.
    std::int64_t images_per_epoch = 400;
    double negative_share = 0.25;

    // Learning-rate search bounds (log scale).
    double lr_search_lo = 1e-6;
    double lr_search_hi = 1e-4;

    nlohmann::json to_json() const {
        return {{"lr", lr},
                {"batch_size", batch_size},
                {"plan", {plan.counts[0], plan.counts[1], plan.counts[2], plan.counts[3]}},
                {"patience", patience},
                {"max_epochs", max_epochs},
                {"seed", seed},
                {"selection", selection.any() ? selection.name() : ""},
                {"val_lesion_sample", val_lesion_sample},
                {"val_patches", val_patches},
                {"images_per_epoch", images_per_epoch},
                {"negative_share", negative_share},
                {"lr_search_lo", lr_search_lo},
                {"lr_search_hi", lr_search_hi}};
    }
    static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig()); }

    static TrainConfig from_json(const nlohmann::json& j, TrainConfig base) {
        TrainConfig c = std::move(base);
        c.lr = j.value("lr", c.lr);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("plan")) {
            auto p = j.at("plan").get<std::vector<std::int64_t>>();
            GLCN_CHECK(p.size() == 4, "plan must have 4 counts");
            c.plan = EpochPlan{{p[0], p[1], p[2], p[3]}};
        }
        c.patience = j.value("patience", c.patience);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.seed = j.value("seed", c.seed);
        const std::string sel = j.value("selection", std::string());
        if (!sel.empty()) c.selection = MapSelection::parse(sel);
        c.val_lesion_sample = j.value("val_lesion_sample", c.val_lesion_sample);
        c.val_patches = j.value("val_patches", c.val_patches);
        c.images_per_epoch = j.value("images_per_epoch", c.images_per_epoch);
        c.negative_share = j.value("negative_share", c.negative_share);
        c.lr_search_lo = j.value("lr_search_lo", c.lr_search_lo);
        c.lr_search_hi = j.value("lr_search_hi", c.lr_search_hi);
        return c;
    }
};

struct EpochStats {
    double train_loss = 0;
    double val_auc = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int best_epoch = 0; // 1-based; 0 = never improved
    double best_val_auc = -1;
    std::string stopping_reason; // patience | max-epochs | error
    std::string error_message;
    double wall_time_sec = 0;
    std::uint64_t seed = 0;
    nlohmann::json config_echo;

    nlohmann::json to_json() const {
        nlohmann::json epochs_json = nlohmann::json::array();
        for (const auto& e : epochs) epochs_json.push_back({{"train_loss", e.train_loss}, {"val_auc", e.val_auc}});
        return {{"epochs", epochs_json},
                {"best_epoch", best_epoch},
                {"best_val_auc", best_val_auc},
                {"stopping_reason", stopping_reason},
                {"error_message", error_message},
                {"wall_time_sec", wall_time_sec},
                {"seed", seed},
                {"config", config_echo}};
    }
};

// The early-stopping protocol, isolated so tests can drive it with injected
// sequences: stop once the validation metric has not increased (strictly)
// for `patience` consecutive epochs; keep the best epoch's snapshot.
inline TrainReport early_stopping_loop(int max_epochs, int patience,
                                       const std::function<double(int)>& train_epoch,
                                       const std::function<double(int)>& validate,
                                       const std::function<void(int)>& snapshot_best) {
    TrainReport report;
    const auto started = std::chrono::steady_clock::now();
    for (int epoch = 1; epoch <= max_epochs; ++epoch) {
        EpochStats stats;
        try {
            stats.train_loss = train_epoch(epoch);
            if (!std::isfinite(stats.train_loss)) fail("non-finite training loss");
            stats.val_auc = validate(epoch);
        } catch (const Error& e) {
            report.stopping_reason = "error";
            report.error_message = e.what();
            break;
        }
        report.epochs.push_back(stats);
        if (stats.val_auc > report.best_val_auc) {
            report.best_val_auc = stats.val_auc;
            report.best_epoch = epoch;
            snapshot_best(epoch);
        }
        if (epoch - report.best_epoch >= patience) {
            report.stopping_reason = "patience";
            break;
        }
    }
    if (report.stopping_reason.empty()) report.stopping_reason = "max-epochs";
    report.wall_time_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

namespace train_detail {

// Deterministic subsample of validation lesions (image index, lesion index).
inline std::vector<std::pair<std::int64_t, std::int64_t>> validation_lesions(
    const std::vector<ImageInfo>& images, int sample, std::uint64_t seed) {
    std::vector<std::pair<std::int64_t, std::int64_t>> all;
    for (std::int64_t i = 0; i < std::int64_t(images.size()); ++i)
        for (std::int64_t l = 0; l < std::int64_t(images[std::size_t(i)].lesions.size()); ++l)
            all.emplace_back(i, l);
    Rng rng = derive_rng(seed, {tag("val-lesions")});
    rng.shuffle(all);
    if (sample > 0 && std::int64_t(all.size()) > sample) all.resize(static_cast<std::size_t>(sample));
    return all;
}

template <typename ScoreFn>
double validation_auc(const std::vector<ImageInfo>& images,
                      const std::vector<std::pair<std::int64_t, std::int64_t>>& lesions, ScoreFn&& score) {
    std::vector<PredictionRecord> records;
    records.reserve(lesions.size());
    for (const auto& [ii, li] : lesions) {
        const ImageInfo& img = images[std::size_t(ii)];
        const LesionInfo& les = img.lesions[std::size_t(li)];
        PredictionRecord r;
        r.lesion_id = les.id;
        r.image_id = img.id;
        r.label = les.label == LesionLabel::Malignant ? 1 : 0;
        r.score = score(img, les);
        records.push_back(std::move(r));
    }
    return auc(records);
}

// Snapshot/restore parameter values and BN state, used to keep the best
// epoch's weights in memory.
template <typename T>
struct ModelSnapshot {
    std::vector<std::vector<T>> values;
    std::vector<std::pair<std::vector<T>, std::vector<T>>> bn;
    std::vector<std::int64_t> bn_updates;
    std::vector<bool> bn_ready;

    void capture(const ModelParams<T>& params) {
        values.clear();
        bn.clear();
        bn_updates.clear();
        bn_ready.clear();
        for (const auto& p : params.owned) values.push_back(p->value.data);
        for (const auto& [name, state] : params.bn_states) {
            bn.emplace_back(state->running_mean, state->running_var);
            bn_updates.push_back(state->updates);
            bn_ready.push_back(state->ready);
        }
    }

    void restore(ModelParams<T>& params) const {
        GLCN_CHECK(!values.empty(), "no snapshot captured");
        for (std::size_t i = 0; i < params.owned.size(); ++i) params.owned[i]->value.data = values[i];
        for (std::size_t i = 0; i < params.bn_states.size(); ++i) {
            params.bn_states[i].second->running_mean = bn[i].first;
            params.bn_states[i].second->running_var = bn[i].second;
            params.bn_states[i].second->updates = bn_updates[i];
            params.bn_states[i].second->ready = bn_ready[i];
        }
    }
};

} // namespace train_detail

struct TrainResult {
    std::optional<Checkpoint> checkpoint;
    TrainReport report;
};

// ---------------------------------------------------------------------------
// Context-net training (image-level labels, both heads).

inline TrainResult train_context(const DatasetManifest& manifest, ImageStore& store,
                                 const ContextNetConfig& net_cfg, const PatchGeometry& geo,
                                 const TrainConfig& cfg) {
    ContextNet<float> net(net_cfg, derive_seed(cfg.seed, {tag("init")}));
    Adam<float> adam;
    const std::vector<ImageInfo>& train = manifest.train;
    GLCN_CHECK(!train.empty(), "empty training split");
    std::vector<std::int64_t> biopsied, negative;
    for (std::int64_t i = 0; i < std::int64_t(train.size()); ++i)
        (train[std::size_t(i)].biopsied ? biopsied : negative).push_back(i);
    GLCN_CHECK(!biopsied.empty(), "context training needs biopsied images");

    PatchSampler val_sampler(manifest, "val", store, geo);
    auto val_lesions = train_detail::validation_lesions(manifest.val, cfg.val_lesion_sample, cfg.seed);
    train_detail::ModelSnapshot<float> best;
    SaliencyCache val_cache;

    auto train_epoch = [&](int epoch) {
        Rng rng = derive_rng(cfg.seed, {tag("ctx-epoch"), std::uint64_t(epoch)});
        const std::int64_t want_neg =
            std::min<std::int64_t>(std::int64_t(double(cfg.images_per_epoch) * cfg.negative_share),
                                   std::int64_t(negative.size()));
        const std::int64_t want_bio = std::min<std::int64_t>(cfg.images_per_epoch - want_neg,
                                                             std::int64_t(biopsied.size()));
        std::vector<std::int64_t> picks;
        for (std::int64_t i = 0; i < want_bio; ++i)
            picks.push_back(biopsied[std::size_t(rng.uniform_int(0, std::int64_t(biopsied.size()) - 1))]);
        for (std::int64_t i = 0; i < want_neg; ++i)
            picks.push_back(negative[std::size_t(rng.uniform_int(0, std::int64_t(negative.size()) - 1))]);
        rng.shuffle(picks);

        double loss_sum = 0;
        std::int64_t batches = 0;
        const ImageInfo& probe = train[std::size_t(picks[0])];
        for (std::size_t at = 0; at < picks.size(); at += std::size_t(cfg.batch_size)) {
            const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, std::int64_t(picks.size() - at));
            Tensor<float> batch({bsz, probe.height, probe.width, 1});
            std::vector<float> has_mal(static_cast<std::size_t>(bsz));
            std::vector<float> has_ben(static_cast<std::size_t>(bsz));
            for (std::int64_t b = 0; b < bsz; ++b) {
                const ImageInfo& img = train[std::size_t(picks[at + std::size_t(b)])];
                const RasterImage& raster = store.get(img);
                std::copy(raster.pixels.begin(), raster.pixels.end(),
                          batch.data.begin() + std::size_t(b) * raster.pixels.size());
                has_mal[std::size_t(b)] = img.has_label(LesionLabel::Malignant) ? 1.f : 0.f;
                has_ben[std::size_t(b)] = img.has_label(LesionLabel::Benign) ? 1.f : 0.f;
            }
            Tape<float> tape;
            auto bound = bind_params(tape, net.params());
            auto sal = net.forward_saliency(tape, tape.input(std::move(batch)), bound, BnMode::Train);
            auto [pm, pb] = net.forward_scores(tape, sal);
            auto loss = tape.add(tape.bce_mean(pm, has_mal), tape.bce_mean(pb, has_ben));
            tape.backward(loss);
            collect_grads(tape, net.params(), bound);
            adam.step(net.params().all(), float(cfg.lr));
            loss_sum += tape.value(loss).data[0];
            ++batches;
        }
        return loss_sum / double(batches);
    };
    auto validate = [&](int) {
        val_cache.by_image.clear(); // weights changed
        return train_detail::validation_auc(manifest.val, val_lesions,
                                            [&](const ImageInfo& img, const LesionInfo&) {
                                                return context_lesion_score(net, val_cache, store, img);
                                            });
    };
    auto snapshot = [&](int) { best.capture(net.params()); };

    TrainReport report = early_stopping_loop(cfg.max_epochs, cfg.patience, train_epoch, validate, snapshot);
    report.seed = cfg.seed;
    report.config_echo = cfg.to_json();
    TrainResult result;
    result.report = std::move(report);
    if (result.report.best_epoch > 0 && result.report.stopping_reason != "error") {
        best.restore(net.params());
        result.checkpoint = net.to_checkpoint({{"best_val_auc", result.report.best_val_auc},
                                               {"best_epoch", result.report.best_epoch},
                                               {"seed", cfg.seed}});
    }
    return result;
}

// ---------------------------------------------------------------------------
// f_loc training (4-class patches, weighted cross-entropy).

inline TrainResult train_local(const DatasetManifest& manifest, ImageStore& store,
                               const LocalNetConfig& net_cfg, const PatchGeometry& geo,
                               const TrainConfig& cfg) {
    LocalNet<float> net(net_cfg, derive_seed(cfg.seed, {tag("init")}));
    Adam<float> adam;
    PatchSampler train_sampler(manifest, "train", store, geo);
    PatchSampler val_sampler(manifest, "val", store, geo);
    auto val_lesions = train_detail::validation_lesions(manifest.val, cfg.val_lesion_sample, cfg.seed);
    train_detail::ModelSnapshot<float> best;

    const auto weights_d = cfg.plan.weights();
    std::vector<float> weights(weights_d.begin(), weights_d.end());
    const std::int64_t s = net_cfg.resolution;

    auto train_epoch = [&](int epoch) {
        auto slots = train_sampler.build_epoch(cfg.plan, derive_seed(cfg.seed, {tag("epoch"), std::uint64_t(epoch)}));
        double loss_sum = 0;
        std::int64_t batches = 0;
        for (std::size_t at = 0; at < slots.size(); at += std::size_t(cfg.batch_size)) {
            const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, std::int64_t(slots.size() - at));
            Tensor<float> batch({bsz, s, s, 1});
            std::vector<int> labels(static_cast<std::size_t>(bsz));
            for (std::int64_t b = 0; b < bsz; ++b) {
                PatchSample sample = train_sampler.materialize(slots[at + std::size_t(b)]);
                std::copy(sample.pixels.data.begin(), sample.pixels.data.end(),
                          batch.data.begin() + std::size_t(b) * std::size_t(s * s));
                labels[std::size_t(b)] = int(sample.cls);
            }
            Tape<float> tape;
            auto bound = bind_params(tape, net.params());
            auto fwd = net.forward(tape, tape.input(std::move(batch)), bound, BnMode::Train);
            auto loss = tape.weighted_cross_entropy(fwd.logits, labels, weights);
            tape.backward(loss);
            collect_grads(tape, net.params(), bound);
            adam.step(net.params().all(), float(cfg.lr));
            loss_sum += tape.value(loss).data[0];
            ++batches;
        }
        return loss_sum / double(batches);
    };
    auto validate = [&](int) {
        return train_detail::validation_auc(manifest.val, val_lesions,
                                            [&](const ImageInfo& img, const LesionInfo& les) {
                                                return floc_lesion_score(net, val_sampler, img, les,
                                                                         cfg.val_patches, cfg.seed);
                                            });
    };
    auto snapshot = [&](int) { best.capture(net.params()); };

    TrainReport report = early_stopping_loop(cfg.max_epochs, cfg.patience, train_epoch, validate, snapshot);
    report.seed = cfg.seed;
    report.config_echo = cfg.to_json();
    TrainResult result;
    result.report = std::move(report);
    if (result.report.best_epoch > 0 && result.report.stopping_reason != "error") {
        best.restore(net.params());
        result.checkpoint = net.to_checkpoint({{"best_val_auc", result.report.best_val_auc},
                                               {"best_epoch", result.report.best_epoch},
                                               {"seed", cfg.seed}});
    }
    return result;
}

// ---------------------------------------------------------------------------
// Aggregation-input cache: windows, classes and embeddings for a fixed pool
// of training patches, plus saliency maps per referenced image. f_loc and
// the context net are frozen here; f_agg epochs read only this pool.

struct AggPoolEntry {
    Window window;
    PatchClass cls = PatchClass::Negative;
    std::int64_t image_index = 0; // into the train split
    std::vector<float> h;         // 32-dim embedding
};

struct AggPool {
    std::vector<AggPoolEntry> entries;
    std::array<std::vector<std::int64_t>, 4> by_class;
    std::unordered_map<std::string, SaliencyPair<float>> saliency; // by image id
    std::string local_hash, context_hash;
    std::int64_t pool_factor = 4;
};

inline AggPool build_agg_pool(const DatasetManifest& manifest, ImageStore& store, LocalNet<float>& local,
                              ContextNet<float>& context, const PatchGeometry& geo, const EpochPlan& plan,
                              std::int64_t pool_factor, std::uint64_t seed,
                              const std::string& local_hash, const std::string& context_hash) {
    AggPool pool;
    pool.local_hash = local_hash;
    pool.context_hash = context_hash;
    pool.pool_factor = pool_factor;
    PatchSampler sampler(manifest, "train", store, geo);
    const std::int64_t s = geo.resolution;

    for (int c = 0; c < 4; ++c) {
        const std::int64_t want = plan.counts[std::size_t(c)] * pool_factor;
        for (std::int64_t i = 0; i < want; ++i) {
            Rng rng = derive_rng(seed, {tag("agg-pool"), std::uint64_t(c), std::uint64_t(i)});
            const std::int64_t image_index = sampler.pick_source(PatchClass(c), rng);
            const ImageInfo& img = manifest.train[std::size_t(image_index)];
            PatchSample sample = sampler.sample_training_patch(img, PatchClass(c), rng);
            AggPoolEntry entry;
            entry.window = sample.window;
            entry.cls = PatchClass(c);
            entry.image_index = image_index;
            entry.h = local.embed(sample.pixels);
            pool.by_class[std::size_t(c)].push_back(std::int64_t(pool.entries.size()));
            pool.entries.push_back(std::move(entry));
        }
    }
    // Saliency once per referenced image.
    for (const auto& entry : pool.entries) {
        const ImageInfo& img = manifest.train[std::size_t(entry.image_index)];
        if (pool.saliency.count(img.id)) continue;
        const RasterImage& raster = store.get(img);
        Tensor<float> image({img.height, img.width, 1}, std::vector<float>(raster.pixels));
        pool.saliency.emplace(img.id, context.saliency_forward(image));
    }
    return pool;
}

// On-disk cache: checkpoint-format blob holding embeddings and saliency
// tensors, JSON index alongside keyed by the upstream checkpoint hashes.
inline void save_agg_pool(const AggPool& pool, const DatasetManifest& manifest, const std::string& stem) {
    Checkpoint blob;
    nlohmann::json index;
    index["local_hash"] = pool.local_hash;
    index["context_hash"] = pool.context_hash;
    index["pool_factor"] = pool.pool_factor;
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < pool.entries.size(); ++i) {
        const AggPoolEntry& e = pool.entries[i];
        entries.push_back({{"top", e.window.top},
                           {"left", e.window.left},
                           {"side", e.window.side},
                           {"angle", e.window.angle_deg},
                           {"class", int(e.cls)},
                           {"image_index", e.image_index}});
        blob.tensors.emplace_back(cat("h/", i), Tensor<float>({kEmbeddingDim}, std::vector<float>(e.h)));
    }
    index["entries"] = std::move(entries);
    nlohmann::json sal_ids = nlohmann::json::array();
    for (const auto& img : manifest.train)
        if (pool.saliency.count(img.id)) sal_ids.push_back(img.id);
    index["saliency_images"] = sal_ids;
    for (const auto& id : sal_ids) {
        const SaliencyPair<float>& sal = pool.saliency.at(id.get<std::string>());
        blob.tensors.emplace_back(cat("sal_m/", id.get<std::string>()), sal.malignant);
        blob.tensors.emplace_back(cat("sal_b/", id.get<std::string>()), sal.benign);
    }
    blob.metadata = index;
    save_checkpoint(stem + ".glcn", blob);
    std::ofstream f(stem + ".index.json", std::ios::trunc);
    if (!f) fail("cannot write cache index: ", stem, ".index.json");
    f << index.dump(1) << "\n";
}

inline std::optional<AggPool> load_agg_pool(const std::string& stem, const std::string& local_hash,
                                            const std::string& context_hash) {
    namespace fs = std::filesystem;
    if (!fs::exists(stem + ".glcn") || !fs::exists(stem + ".index.json")) return std::nullopt;
    Checkpoint blob;
    try {
        blob = load_checkpoint(stem + ".glcn");
    } catch (const Error&) {
        return std::nullopt; // unreadable cache rebuilds
    }
    const nlohmann::json& index = blob.metadata;
    if (index.value("local_hash", "") != local_hash || index.value("context_hash", "") != context_hash)
        return std::nullopt; // checkpoint mismatch invalidates the cache
    AggPool pool;
    pool.local_hash = local_hash;
    pool.context_hash = context_hash;
    pool.pool_factor = index.value("pool_factor", std::int64_t(4));
    std::size_t i = 0;
    for (const auto& e : index.at("entries")) {
        AggPoolEntry entry;
        entry.window = Window{e.at("top").get<double>(), e.at("left").get<double>(),
                              e.at("side").get<std::int64_t>(), e.at("angle").get<double>()};
        entry.cls = PatchClass(e.at("class").get<int>());
        entry.image_index = e.at("image_index").get<std::int64_t>();
        const Tensor<float>* h = blob.find(cat("h/", i));
        if (!h) return std::nullopt;
        entry.h = h->data;
        pool.by_class[std::size_t(int(entry.cls))].push_back(std::int64_t(pool.entries.size()));
        pool.entries.push_back(std::move(entry));
        ++i;
    }
    for (const auto& id : index.at("saliency_images")) {
        const Tensor<float>* m = blob.find(cat("sal_m/", id.get<std::string>()));
        const Tensor<float>* b = blob.find(cat("sal_b/", id.get<std::string>()));
        if (!m || !b) return std::nullopt;
        pool.saliency.emplace(id.get<std::string>(), SaliencyPair<float>{*m, *b});
    }
    return pool;
}

// ---------------------------------------------------------------------------
// f_agg training from the pool.

inline TrainResult train_agg(const DatasetManifest& manifest, ImageStore& store, const AggPool& pool,
                             LocalNet<float>& local, ContextNet<float>& context,
                             const PatchGeometry& geo, const TrainConfig& cfg) {
    GLCN_CHECK(cfg.selection.any(), "agg training requires a map selection");
    const std::int64_t gh = manifest.train.at(0).height / context.config().grid_factor;
    const std::int64_t gw = manifest.train.at(0).width / context.config().grid_factor;
    AggNetConfig net_cfg;
    net_cfg.input_channels = cfg.selection.channels();
    AggNet<float> net(net_cfg, derive_seed(cfg.seed, {tag("init")}));
    Adam<float> adam;

    PatchSampler val_sampler(manifest, "val", store, geo);
    auto val_lesions = train_detail::validation_lesions(manifest.val, cfg.val_lesion_sample, cfg.seed);
    train_detail::ModelSnapshot<float> best;
    SaliencyCache val_sal_cache;
    EmbeddingCache val_emb_cache;

    const auto weights_d = cfg.plan.weights();
    std::vector<float> weights(weights_d.begin(), weights_d.end());
    const std::int64_t m = cfg.selection.channels();

    auto assemble_entry = [&](const AggPoolEntry& entry, float* dst) {
        const ImageInfo& img = manifest.train[std::size_t(entry.image_index)];
        Tensor<float> ind = location_indicator<float>(entry.window, img.height, img.width, gh, gw);
        Tensor<float> emb;
        if (cfg.selection.embedding) emb = embedding_map(ind, entry.h);
        const SaliencyPair<float>* sal = cfg.selection.saliency ? &pool.saliency.at(img.id) : nullptr;
        AssembledInput<float> x = assemble(cfg.selection, &ind, sal, emb.numel() ? &emb : nullptr);
        std::copy(x.x.data.begin(), x.x.data.end(), dst);
    };

    auto train_epoch = [&](int epoch) {
        // Draw the plan counts per class from the pool, then shuffle.
        Rng rng = derive_rng(cfg.seed, {tag("agg-epoch"), std::uint64_t(epoch)});
        std::vector<std::int64_t> picks;
        for (int c = 0; c < 4; ++c) {
            std::vector<std::int64_t> ids = pool.by_class[std::size_t(c)];
            GLCN_CHECK(std::int64_t(ids.size()) >= cfg.plan.counts[std::size_t(c)],
                       "agg pool too small for class ", c);
            rng.shuffle(ids);
            picks.insert(picks.end(), ids.begin(), ids.begin() + cfg.plan.counts[std::size_t(c)]);
        }
        rng.shuffle(picks);

        double loss_sum = 0;
        std::int64_t batches = 0;
        for (std::size_t at = 0; at < picks.size(); at += std::size_t(cfg.batch_size)) {
            const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, std::int64_t(picks.size() - at));
            Tensor<float> batch({bsz, gh, gw, m});
            std::vector<int> labels(static_cast<std::size_t>(bsz));
            for (std::int64_t b = 0; b < bsz; ++b) {
                const AggPoolEntry& entry = pool.entries[std::size_t(picks[at + std::size_t(b)])];
                assemble_entry(entry, batch.data.data() + std::size_t(b) * std::size_t(gh * gw * m));
                labels[std::size_t(b)] = int(entry.cls);
            }
            Tape<float> tape;
            auto bound = bind_params(tape, net.params());
            auto logits = net.forward(tape, tape.input(std::move(batch)), bound, BnMode::Train);
            auto loss = tape.weighted_cross_entropy(logits, labels, weights);
            tape.backward(loss);
            collect_grads(tape, net.params(), bound);
            adam.step(net.params().all(), float(cfg.lr));
            loss_sum += tape.value(loss).data[0];
            ++batches;
        }
        return loss_sum / double(batches);
    };
    auto validate = [&](int) {
        LesionScorerConfig scfg;
        scfg.selection = cfg.selection;
        scfg.patches_per_lesion = cfg.val_patches;
        scfg.eval_seed = cfg.seed;
        scfg.grid_h = gh;
        scfg.grid_w = gw;
        LesionScorer scorer(local, &context, net, scfg, &val_sal_cache, &val_emb_cache);
        return train_detail::validation_auc(manifest.val, val_lesions,
                                            [&](const ImageInfo& img, const LesionInfo& les) {
                                                return scorer.score(val_sampler, store, img, les);
                                            });
    };
    auto snapshot = [&](int) { best.capture(net.params()); };

    TrainReport report = early_stopping_loop(cfg.max_epochs, cfg.patience, train_epoch, validate, snapshot);
    report.seed = cfg.seed;
    report.config_echo = cfg.to_json();
    TrainResult result;
    result.report = std::move(report);
    if (result.report.best_epoch > 0 && result.report.stopping_reason != "error") {
        best.restore(net.params());
        nlohmann::json extra = {{"best_val_auc", result.report.best_val_auc},
                                {"best_epoch", result.report.best_epoch},
                                {"seed", cfg.seed},
                                {"selection", cfg.selection.name()},
                                {"local_hash", pool.local_hash},
                                {"context_hash", pool.context_hash}};
        result.checkpoint = net.to_checkpoint(std::move(extra));
        (*result.checkpoint).metadata["config"]["channel_legend"] = cfg.selection.legend();
    }
    return result;
}

// ---------------------------------------------------------------------------
// Random search over the learning rate (log-uniform draws).

inline double draw_log_uniform(double lo, double hi, Rng& rng) {
    GLCN_CHECK(lo > 0 && hi >= lo, "log-uniform bounds must satisfy 0 < lo <= hi");
    return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

struct SearchTrial {
    double lr = 0;
    TrainReport report;
};

struct SearchResult {
    int best_trial = -1;
    TrainConfig best_config;
    std::vector<SearchTrial> trials;
};

inline SearchResult random_search(const TrainConfig& base, int trials, std::uint64_t master_seed,
                                  const std::function<TrainResult(const TrainConfig&)>& run) {
    GLCN_CHECK(trials >= 1, "random search needs at least one trial");
    SearchResult result;
    double best_auc = -1;
    for (int t = 0; t < trials; ++t) {
        Rng rng = derive_rng(master_seed, {tag("search"), std::uint64_t(t)});
        TrainConfig cfg = base;
        cfg.lr = draw_log_uniform(base.lr_search_lo, base.lr_search_hi, rng);
        cfg.seed = derive_seed(master_seed, {tag("search-trial"), std::uint64_t(t)});
        TrainResult res = run(cfg);
        SearchTrial trial;
        trial.lr = cfg.lr;
        trial.report = res.report;
        if (res.report.stopping_reason != "error" && res.report.best_val_auc > best_auc) {
            best_auc = res.report.best_val_auc;
            result.best_trial = t;
            result.best_config = cfg;
        }
        result.trials.push_back(std::move(trial));
    }
    GLCN_CHECK(result.best_trial >= 0, "all random-search trials failed");
    return result;
}

} // namespace glcn
