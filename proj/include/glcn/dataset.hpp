#pragma once

// Dataset manifest: per-split image records with lesion annotations
// (run-length-encoded masks), plus a JSON codec and an LRU-cached image
// loader. Splits are patient-disjoint by construction and checked on load.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <list>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "glcn/geometry.hpp"
#include "glcn/image_io.hpp"

namespace glcn {

enum class LesionLabel { Benign = 0, Malignant = 1 };
enum class Morphology { Blob, Spiculated, Ambiguous };

inline const char* label_name(LesionLabel l) { return l == LesionLabel::Malignant ? "malignant" : "benign"; }
inline const char* morphology_name(Morphology m) {
    switch (m) {
        case Morphology::Blob: return "blob";
        case Morphology::Spiculated: return "spiculated";
        default: return "ambiguous";
    }
}
inline LesionLabel label_from_name(const std::string& s) {
    if (s == "malignant") return LesionLabel::Malignant;
    if (s == "benign") return LesionLabel::Benign;
    fail("unknown lesion label '", s, "'");
}
inline Morphology morphology_from_name(const std::string& s) {
    if (s == "blob") return Morphology::Blob;
    if (s == "spiculated") return Morphology::Spiculated;
    if (s == "ambiguous") return Morphology::Ambiguous;
    fail("unknown morphology '", s, "'");
}

struct LesionInfo {
    std::string id;
    LesionLabel label = LesionLabel::Benign;
    Morphology morphology = Morphology::Blob;
    double context_level = 0; // mean density over the mask, recorded at generation
    Bitmap mask;
};

struct ImageInfo {
    std::string id;
    std::string patient_id;
    std::string path; // relative to the dataset root
    std::string side; // cosmetic L/R tag
    bool biopsied = false;
    std::int64_t height = 0, width = 0;
    std::vector<LesionInfo> lesions;

    bool has_label(LesionLabel l) const {
        for (const auto& les : lesions)
            if (les.label == l) return true;
        return false;
    }
};

struct SplitCounts {
    std::int64_t images = 0, lesions = 0, malignant = 0, benign = 0;
};

struct DatasetManifest {
    nlohmann::json config_echo;
    std::uint64_t seed = 0;
    std::string root; // directory holding manifest.json, set on load/save
    std::vector<ImageInfo> train, val, test;

    const std::vector<ImageInfo>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        fail("unknown split '", name, "'");
    }

    static SplitCounts count(const std::vector<ImageInfo>& images) {
        SplitCounts c;
        c.images = std::int64_t(images.size());
        for (const auto& img : images)
            for (const auto& les : img.lesions) {
                ++c.lesions;
                (les.label == LesionLabel::Malignant ? c.malignant : c.benign)++;
            }
        return c;
    }
};

namespace detail {

inline nlohmann::json lesion_to_json(const LesionInfo& les) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& [start, len] : rle_encode(les.mask)) runs.push_back({start, len});
    return {{"lesion_id", les.id},
            {"label", label_name(les.label)},
            {"morphology", morphology_name(les.morphology)},
            {"context_level", les.context_level},
            {"rle", runs}};
}

inline nlohmann::json image_to_json(const ImageInfo& img) {
    nlohmann::json lesions = nlohmann::json::array();
    for (const auto& les : img.lesions) lesions.push_back(lesion_to_json(les));
    return {{"image_id", img.id},     {"patient_id", img.patient_id}, {"path", img.path},
            {"side", img.side},       {"biopsied", img.biopsied},     {"height", img.height},
            {"width", img.width},     {"lesions", lesions}};
}

inline LesionInfo lesion_from_json(const nlohmann::json& j, std::int64_t h, std::int64_t w) {
    LesionInfo les;
    les.id = j.at("lesion_id").get<std::string>();
    les.label = label_from_name(j.at("label").get<std::string>());
    les.morphology = morphology_from_name(j.at("morphology").get<std::string>());
    les.context_level = j.at("context_level").get<double>();
    std::vector<std::pair<std::int64_t, std::int64_t>> runs;
    for (const auto& r : j.at("rle")) runs.emplace_back(r.at(0).get<std::int64_t>(), r.at(1).get<std::int64_t>());
    les.mask = rle_decode(runs, h, w);
    return les;
}

inline ImageInfo image_from_json(const nlohmann::json& j) {
    ImageInfo img;
    img.id = j.at("image_id").get<std::string>();
    img.patient_id = j.at("patient_id").get<std::string>();
    img.path = j.at("path").get<std::string>();
    img.side = j.at("side").get<std::string>();
    img.biopsied = j.at("biopsied").get<bool>();
    img.height = j.at("height").get<std::int64_t>();
    img.width = j.at("width").get<std::int64_t>();
    for (const auto& l : j.at("lesions")) img.lesions.push_back(lesion_from_json(l, img.height, img.width));
    GLCN_CHECK(img.biopsied == !img.lesions.empty(), "biopsied flag inconsistent for image ", img.id);
    return img;
}

} // namespace detail

inline void save_manifest(const DatasetManifest& manifest, const std::string& dir) {
    nlohmann::json j;
    j["config"] = manifest.config_echo;
    j["seed"] = manifest.seed;
    j["format"] = {{"image", "gimg-v1"}, {"mask", "rle-v1"}};
    for (const char* name : {"train", "val", "test"}) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& img : manifest.split(name)) arr.push_back(detail::image_to_json(img));
        j["splits"][name] = std::move(arr);
        SplitCounts c = DatasetManifest::count(manifest.split(name));
        j["counts"][name] = {{"images", c.images},
                             {"lesions", c.lesions},
                             {"malignant", c.malignant},
                             {"benign", c.benign}};
    }
    std::ofstream f(dir + "/manifest.json", std::ios::trunc);
    if (!f) fail("cannot write manifest in ", dir);
    f << j.dump(1) << "\n";
}

inline DatasetManifest load_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.json";
    std::ifstream f(path);
    if (!f) throw MissingArtifactError(cat("dataset manifest not found: ", path));
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("invalid manifest ", path, ": ", e.what());
    }
    DatasetManifest m;
    m.root = dir;
    m.config_echo = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& img : j.at("splits").at("train")) m.train.push_back(detail::image_from_json(img));
    for (const auto& img : j.at("splits").at("val")) m.val.push_back(detail::image_from_json(img));
    for (const auto& img : j.at("splits").at("test")) m.test.push_back(detail::image_from_json(img));

    // Patient disjointness across splits.
    std::unordered_map<std::string, int> owner;
    int split_idx = 0;
    for (const auto* split : {&m.train, &m.val, &m.test}) {
        for (const auto& img : *split) {
            auto [it, inserted] = owner.emplace(img.patient_id, split_idx);
            GLCN_CHECK(inserted || it->second == split_idx, "patient ", img.patient_id,
                       " appears in more than one split");
        }
        ++split_idx;
    }
    return m;
}

// Read-through cache for decoded rasters.
class ImageStore {
public:
    explicit ImageStore(std::string root, std::size_t capacity = 256)
        : root_(std::move(root)), capacity_(capacity) {}

    const RasterImage& get(const ImageInfo& info) {
        auto it = cache_.find(info.id);
        if (it != cache_.end()) {
            lru_.splice(lru_.begin(), lru_, it->second.second);
            return it->second.first;
        }
        RasterImage img = load_gimg(root_ + "/" + info.path);
        GLCN_CHECK(img.height == info.height && img.width == info.width, "raster dims mismatch for ",
                   info.id);
        lru_.push_front(info.id);
        auto [pos, _] = cache_.emplace(info.id, std::make_pair(std::move(img), lru_.begin()));
        if (cache_.size() > capacity_) {
            cache_.erase(lru_.back());
            lru_.pop_back();
        }
        return pos->second.first;
    }

private:
    std::string root_;
    std::size_t capacity_;
    std::list<std::string> lru_;
    std::unordered_map<std::string, std::pair<RasterImage, std::list<std::string>::iterator>> cache_;
};

} // namespace glcn
