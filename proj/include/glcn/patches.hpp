#pragma once

// Patch taxonomy and sampling.
//
// Window classes: overlaps only malignant masks -> malignant; only benign
// -> benign; no overlap on a biopsied image -> outside; anything on a
// non-biopsied image -> negative; overlap with both kinds -> mixed, which
// is excluded from training. Overlap means at least one shared pixel
// between the window footprint and a mask.
//
// Window origins are snapped to integer pixels, so at rotation 0 the
// footprint law is exact: a side-s window covers exactly s*s pixels.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "glcn/dataset.hpp"
#include "glcn/geometry.hpp"
#include "glcn/rng.hpp"
#include "glcn/tensor.hpp"

namespace glcn {

enum class PatchClass { Malignant = 0, Benign = 1, Outside = 2, Negative = 3 };
inline constexpr int kPatchClasses = 4;
inline const char* patch_class_name(PatchClass c) {
    switch (c) {
        case PatchClass::Malignant: return "malignant";
        case PatchClass::Benign: return "benign";
        case PatchClass::Outside: return "outside";
        default: return "negative";
    }
}

struct PatchGeometry {
    std::int64_t side_min = 32;
    std::int64_t side_max = 96;
    std::int64_t resolution = 64;
    double rotation_max_deg = 30.0;
    int rejection_budget = 1000;

    void validate(std::int64_t height, std::int64_t width) const {
        GLCN_CHECK(side_min >= 4 && side_max >= side_min, "bad patch side range");
        GLCN_CHECK(side_max < std::min(height, width), "patch side ", side_max,
                   " must be smaller than image dims ", height, "x", width);
        GLCN_CHECK(resolution >= 8, "patch resolution too small");
    }

    nlohmann::json to_json() const {
        return {{"side_min", side_min},
                {"side_max", side_max},
                {"resolution", resolution},
                {"rotation_max_deg", rotation_max_deg},
                {"rejection_budget", rejection_budget}};
    }
    static PatchGeometry from_json(const nlohmann::json& j) {
        PatchGeometry g;
        g.side_min = j.value("side_min", g.side_min);
        g.side_max = j.value("side_max", g.side_max);
        g.resolution = j.value("resolution", g.resolution);
        g.rotation_max_deg = j.value("rotation_max_deg", g.rotation_max_deg);
        g.rejection_budget = j.value("rejection_budget", g.rejection_budget);
        return g;
    }
};

struct EpochPlan {
    std::array<std::int64_t, 4> counts; // malignant, benign, outside, negative

    std::int64_t total() const { return counts[0] + counts[1] + counts[2] + counts[3]; }

    // weights[c] = total / counts[c], the inverse of each class's share.
    std::array<double, 4> weights() const {
        std::array<double, 4> w{};
        const double t = double(total());
        for (int c = 0; c < 4; ++c) {
            GLCN_CHECK(counts[std::size_t(c)] > 0, "epoch plan requires positive counts, class ", c);
            w[std::size_t(c)] = t / double(counts[std::size_t(c)]);
        }
        return w;
    }
};

// The paper-scale plan: 20 / 35 / 5000 / 4945.
inline EpochPlan reference_epoch_plan() { return EpochPlan{{20, 35, 5000, 4945}}; }

struct PatchSample {
    Tensor<float> pixels; // [S,S,1]
    Window window;
    std::string image_id;
    PatchClass cls = PatchClass::Negative;
};

struct EpochSlot {
    PatchClass cls;
    std::int64_t image_index; // into the split's image list
    std::uint64_t rng_seed;   // per-slot stream, so extraction parallelizes
};

class PatchSampler {
public:
    PatchSampler(const DatasetManifest& manifest, const std::string& split, ImageStore& store,
                 PatchGeometry geometry)
        : images_(&manifest.split(split)), store_(&store), geo_(geometry) {
        if (!images_->empty()) geo_.validate((*images_)[0].height, (*images_)[0].width);
        for (std::int64_t i = 0; i < std::int64_t(images_->size()); ++i) {
            const ImageInfo& img = (*images_)[std::size_t(i)];
            if (img.has_label(LesionLabel::Malignant)) with_malignant_.push_back(i);
            if (img.has_label(LesionLabel::Benign)) with_benign_.push_back(i);
            (img.biopsied ? biopsied_ : negative_).push_back(i);
        }
    }

    const std::vector<ImageInfo>& images() const { return *images_; }
    const PatchGeometry& geometry() const { return geo_; }

    // Pure function of the window and annotations; nullopt means mixed.
    std::optional<PatchClass> classify_window(const ImageInfo& img, const Window& window) const {
        if (!img.biopsied) return PatchClass::Negative;
        bool mal = false, ben = false;
        const std::vector<std::int16_t>& labels = label_map(img);
        BoundingBox b = window_bbox(window);
        const std::int64_t r0 = std::max<std::int64_t>(0, std::int64_t(std::floor(b.top - 0.5)));
        const std::int64_t r1 = std::min<std::int64_t>(img.height - 1, std::int64_t(std::ceil(b.bottom)));
        const std::int64_t c0 = std::max<std::int64_t>(0, std::int64_t(std::floor(b.left - 0.5)));
        const std::int64_t c1 = std::min<std::int64_t>(img.width - 1, std::int64_t(std::ceil(b.right)));
        for (std::int64_t r = r0; r <= r1; ++r)
            for (std::int64_t c = c0; c <= c1; ++c) {
                const std::int16_t l = labels[std::size_t(r * img.width + c)];
                if (l == 0) continue;
                if (!window_contains(window, r + 0.5, c + 0.5)) continue;
                (img.lesions[std::size_t(l - 1)].label == LesionLabel::Malignant ? mal : ben) = true;
            }
        if (mal && ben) return std::nullopt;
        if (mal) return PatchClass::Malignant;
        if (ben) return PatchClass::Benign;
        return PatchClass::Outside;
    }

    bool class_achievable(const ImageInfo& img, PatchClass target) const {
        switch (target) {
            case PatchClass::Malignant: return img.has_label(LesionLabel::Malignant);
            case PatchClass::Benign: return img.has_label(LesionLabel::Benign);
            case PatchClass::Outside: return img.biopsied;
            case PatchClass::Negative: return !img.biopsied;
        }
        return false;
    }

    // Rejection-samples a window until its class matches the target, then
    // extracts the rotated, resized patch.
    PatchSample sample_training_patch(const ImageInfo& img, PatchClass target, Rng& rng) const {
        GLCN_CHECK(class_achievable(img, target), "class ", patch_class_name(target),
                   " not achievable on image ", img.id);
        for (int tries = 0; tries < geo_.rejection_budget; ++tries) {
            const std::int64_t side = rng.uniform_int(geo_.side_min, geo_.side_max);
            const double angle = rng.uniform(-geo_.rotation_max_deg, geo_.rotation_max_deg);
            Window w = random_window(img, side, angle, rng);
            if (classify_window(img, w) != target) continue;
            return make_sample(img, w, target);
        }
        fail("rejection budget exhausted sampling class '", patch_class_name(target), "' on image ",
             img.id);
    }

    // Evaluation-time patches for one lesion: rotation fixed at 0, sides
    // uniform in the training range, every window overlapping the mask.
    std::vector<PatchSample> sample_lesion_patches(const ImageInfo& img, const LesionInfo& lesion,
                                                   int n, Rng& rng) const {
        GLCN_CHECK(n >= 1, "need at least one patch per lesion");
        GLCN_CHECK(lesion.mask.count() > 0, "lesion mask empty: ", lesion.id);
        // Mask bounding box confines the centre search.
        std::int64_t mr0 = img.height, mr1 = -1, mc0 = img.width, mc1 = -1;
        for (std::int64_t r = 0; r < img.height; ++r)
            for (std::int64_t c = 0; c < img.width; ++c)
                if (lesion.mask.get(r, c)) {
                    mr0 = std::min(mr0, r); mr1 = std::max(mr1, r);
                    mc0 = std::min(mc0, c); mc1 = std::max(mc1, c);
                }
        std::vector<PatchSample> out;
        out.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            bool found = false;
            for (int tries = 0; tries < geo_.rejection_budget && !found; ++tries) {
                const std::int64_t side = rng.uniform_int(geo_.side_min, geo_.side_max);
                const std::int64_t lo_r = std::max<std::int64_t>(0, mr0 - side + 1);
                const std::int64_t hi_r = std::min(img.height - side, mr1);
                const std::int64_t lo_c = std::max<std::int64_t>(0, mc0 - side + 1);
                const std::int64_t hi_c = std::min(img.width - side, mc1);
                if (lo_r > hi_r || lo_c > hi_c) continue;
                Window w{double(rng.uniform_int(lo_r, hi_r)), double(rng.uniform_int(lo_c, hi_c)), side, 0.0};
                if (!window_overlaps_mask(w, lesion.mask)) continue;
                PatchClass cls = img.has_label(LesionLabel::Malignant) || img.has_label(LesionLabel::Benign)
                                     ? (lesion.label == LesionLabel::Malignant ? PatchClass::Malignant
                                                                               : PatchClass::Benign)
                                     : PatchClass::Negative;
                out.push_back(make_sample(img, w, cls));
                found = true;
            }
            if (!found)
                fail("rejection budget exhausted sampling evaluation patches for lesion ", lesion.id);
        }
        return out;
    }

    // Plans an epoch: exact per-class counts, sources drawn uniformly from
    // eligible images, global shuffle. Patches materialize per slot.
    std::vector<EpochSlot> build_epoch(const EpochPlan& plan, std::uint64_t epoch_seed) const {
        plan.weights(); // validates counts
        std::vector<EpochSlot> slots;
        slots.reserve(std::size_t(plan.total()));
        Rng rng(derive_seed(epoch_seed, {tag("epoch-plan")}));
        for (int c = 0; c < 4; ++c) {
            const auto cls = PatchClass(c);
            const std::vector<std::int64_t>& pool = source_pool(cls);
            GLCN_CHECK(!pool.empty(), "no source images for class '", patch_class_name(cls),
                       "' in this split");
            for (std::int64_t i = 0; i < plan.counts[std::size_t(c)]; ++i) {
                EpochSlot slot;
                slot.cls = cls;
                slot.image_index = pool[std::size_t(rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
                slot.rng_seed = derive_seed(epoch_seed, {tag("slot"), std::uint64_t(c), std::uint64_t(i)});
                slots.push_back(slot);
            }
        }
        rng.shuffle(slots);
        return slots;
    }

    // Uniform draw of an eligible source image for a class.
    std::int64_t pick_source(PatchClass cls, Rng& rng) const {
        const std::vector<std::int64_t>& pool = source_pool(cls);
        GLCN_CHECK(!pool.empty(), "no source images for class '", patch_class_name(cls), "'");
        return pool[std::size_t(rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
    }

    PatchSample materialize(const EpochSlot& slot) const {
        const ImageInfo& img = (*images_)[std::size_t(slot.image_index)];
        Rng rng(slot.rng_seed);
        return sample_training_patch(img, slot.cls, rng);
    }

    PatchSample make_sample(const ImageInfo& img, const Window& w, PatchClass cls) const {
        const RasterImage& raster = store_->get(img);
        PatchSample s;
        s.pixels = extract_patch(raster.pixels.data(), img.height, img.width, w, geo_.resolution);
        s.window = w;
        s.image_id = img.id;
        s.cls = cls;
        return s;
    }

private:
    Window random_window(const ImageInfo& img, std::int64_t side, double angle, Rng& rng) const {
        const double rad = angle * 3.14159265358979323846 / 180.0;
        const double extent = double(side) / 2.0 * (std::abs(std::cos(rad)) + std::abs(std::sin(rad)));
        const double slack = extent - double(side) / 2.0; // extra reach of the rotated bbox
        const std::int64_t lo_r = std::int64_t(std::ceil(slack));
        const std::int64_t hi_r = std::int64_t(std::floor(double(img.height) - double(side) - slack));
        const std::int64_t lo_c = std::int64_t(std::ceil(slack));
        const std::int64_t hi_c = std::int64_t(std::floor(double(img.width) - double(side) - slack));
        GLCN_CHECK(lo_r <= hi_r && lo_c <= hi_c, "window side ", side, " does not fit image ", img.id);
        return Window{double(rng.uniform_int(lo_r, hi_r)), double(rng.uniform_int(lo_c, hi_c)), side, angle};
    }

    const std::vector<std::int64_t>& source_pool(PatchClass c) const {
        switch (c) {
            case PatchClass::Malignant: return with_malignant_;
            case PatchClass::Benign: return with_benign_;
            case PatchClass::Outside: return biopsied_;
            default: return negative_;
        }
    }

    const std::vector<std::int16_t>& label_map(const ImageInfo& img) const {
        auto it = label_maps_.find(img.id);
        if (it != label_maps_.end()) return it->second;
        std::vector<std::int16_t> labels(std::size_t(img.height * img.width), 0);
        for (std::size_t li = 0; li < img.lesions.size(); ++li) {
            const Bitmap& mask = img.lesions[li].mask;
            for (std::size_t p = 0; p < mask.bits.size(); ++p)
                if (mask.bits[p]) labels[p] = std::int16_t(li + 1);
        }
        return label_maps_.emplace(img.id, std::move(labels)).first->second;
    }

    const std::vector<ImageInfo>* images_;
    ImageStore* store_;
    PatchGeometry geo_;
    std::vector<std::int64_t> with_malignant_, with_benign_, biopsied_, negative_;
    mutable std::unordered_map<std::string, std::vector<std::int16_t>> label_maps_;
};

} // namespace glcn
