#pragma once

// Procedural grayscale image generator with planted lesions.
//
// Ground truth follows a fixed rule: blob morphology is benign, spiculated
// is malignant, and an "ambiguous" lesion is malignant exactly when the
// mean of the latent density field over its mask exceeds 0.5.
//
// The density field is rendered into the background only at a distance from
// every lesion (a smooth visibility ramp between suppress_r0 and
// suppress_r1 pixels from the lesion); closer in, the background is flat
// mid-gray. A cropping window that overlaps a lesion therefore sees
// essentially none of the density signal, while a whole-image model sees it
// over most of the frame. That is what makes the ambiguous class locally
// undecidable yet globally decidable. Lesions themselves render at one
// shared brightness, so morphology is the only local cue.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "glcn/dataset.hpp"
#include "glcn/rng.hpp"

namespace glcn {

struct GeneratorConfig {
    std::int64_t height = 368;
    std::int64_t width = 240;
    std::int64_t grid_factor = 16;

    std::int64_t patients = 200;
    std::int64_t images_per_patient = 1;
    double biopsied_fraction = 0.8;
    std::vector<double> lesion_count_probs = {0.55, 0.33, 0.12}; // P(1),P(2),P(3) on biopsied images
    double ambiguous_fraction = 0.5;
    double blob_fraction = 0.25; // remainder is spiculated

    double lesion_radius_min = 10.0;
    double lesion_radius_max = 17.0;
    double lesion_brightness = 0.82;

    // Density-field rendering.
    double suppress_r0 = 140.0; // fully suppressed inside this distance from a lesion
    double suppress_r1 = 172.0; // fully visible beyond this distance
    double background_contrast = 0.62;
    double noise_amplitude = 0.02;
    double density_override = -1.0; // >= 0 forces D to a constant (tests)

    void validate() const {
        GLCN_CHECK(height > 0 && width > 0, "image dims must be positive");
        GLCN_CHECK(height % grid_factor == 0 && width % grid_factor == 0, "dims ", height, "x", width,
                   " must be divisible by grid factor ", grid_factor);
        GLCN_CHECK(patients >= 1 && images_per_patient >= 1, "need at least one patient and image");
        GLCN_CHECK(biopsied_fraction >= 0 && biopsied_fraction <= 1, "biopsied_fraction in [0,1]");
        double total = 0;
        for (double p : lesion_count_probs) {
            GLCN_CHECK(p >= 0, "lesion count probabilities must be non-negative");
            total += p;
        }
        GLCN_CHECK(std::abs(total - 1.0) < 1e-9, "lesion-count distribution must sum to 1, got ", total);
        GLCN_CHECK(ambiguous_fraction >= 0 && blob_fraction >= 0 &&
                       ambiguous_fraction + blob_fraction <= 1.0 + 1e-12,
                   "morphology fractions invalid");
        GLCN_CHECK(lesion_radius_min > 2 && lesion_radius_max >= lesion_radius_min, "bad radius range");
        GLCN_CHECK(suppress_r1 > suppress_r0 && suppress_r0 > 0, "bad suppression ramp");
    }

    nlohmann::json to_json() const {
        return {{"height", height},
                {"width", width},
                {"grid_factor", grid_factor},
                {"patients", patients},
                {"images_per_patient", images_per_patient},
                {"biopsied_fraction", biopsied_fraction},
                {"lesion_count_probs", lesion_count_probs},
                {"ambiguous_fraction", ambiguous_fraction},
                {"blob_fraction", blob_fraction},
                {"lesion_radius_min", lesion_radius_min},
                {"lesion_radius_max", lesion_radius_max},
                {"lesion_brightness", lesion_brightness},
                {"suppress_r0", suppress_r0},
                {"suppress_r1", suppress_r1},
                {"background_contrast", background_contrast},
                {"noise_amplitude", noise_amplitude},
                {"density_override", density_override}};
    }

    static GeneratorConfig from_json(const nlohmann::json& j) {
        GeneratorConfig c;
        c.height = j.value("height", c.height);
        c.width = j.value("width", c.width);
        c.grid_factor = j.value("grid_factor", c.grid_factor);
        c.patients = j.value("patients", c.patients);
        c.images_per_patient = j.value("images_per_patient", c.images_per_patient);
        c.biopsied_fraction = j.value("biopsied_fraction", c.biopsied_fraction);
        if (j.contains("lesion_count_probs"))
            c.lesion_count_probs = j.at("lesion_count_probs").get<std::vector<double>>();
        c.ambiguous_fraction = j.value("ambiguous_fraction", c.ambiguous_fraction);
        c.blob_fraction = j.value("blob_fraction", c.blob_fraction);
        c.lesion_radius_min = j.value("lesion_radius_min", c.lesion_radius_min);
        c.lesion_radius_max = j.value("lesion_radius_max", c.lesion_radius_max);
        c.lesion_brightness = j.value("lesion_brightness", c.lesion_brightness);
        c.suppress_r0 = j.value("suppress_r0", c.suppress_r0);
        c.suppress_r1 = j.value("suppress_r1", c.suppress_r1);
        c.background_contrast = j.value("background_contrast", c.background_contrast);
        c.noise_amplitude = j.value("noise_amplitude", c.noise_amplitude);
        c.density_override = j.value("density_override", c.density_override);
        return c;
    }
};

// The ground-truth labelling rule.
inline LesionLabel lesion_label_rule(Morphology morphology, double context_level) {
    switch (morphology) {
        case Morphology::Blob: return LesionLabel::Benign;
        case Morphology::Spiculated: return LesionLabel::Malignant;
        default: return context_level > 0.5 ? LesionLabel::Malignant : LesionLabel::Benign;
    }
}

namespace synth_detail {

// Smooth low-frequency density field; the per-image level is bimodal so the
// 0.5 threshold stays decisive under the ripple.
struct DensityField {
    double mu, amp, kx, ky, phase;

    static DensityField sample(Rng& rng) {
        DensityField d{};
        d.mu = rng.uniform() < 0.5 ? rng.uniform(0.10, 0.40) : rng.uniform(0.60, 0.90);
        d.amp = rng.uniform(0.02, 0.08);
        const double angle = rng.uniform(0.0, 2 * 3.14159265358979323846);
        const double wavelength = rng.uniform(0.8, 1.6) * 500.0;
        d.kx = std::cos(angle) * 2 * 3.14159265358979323846 / wavelength;
        d.ky = std::sin(angle) * 2 * 3.14159265358979323846 / wavelength;
        d.phase = rng.uniform(0.0, 2 * 3.14159265358979323846);
        return d;
    }

    double at(double r, double c) const {
        double v = mu + amp * std::cos(kx * c + ky * r + phase);
        return v < 0 ? 0 : (v > 1 ? 1 : v);
    }
};

// Soft shape field: ~1 deep inside, 0.5 on the nominal boundary, 0 outside.
// The mask is field >= 0.5; rendering blends with it for a soft edge.
struct LesionShape {
    Morphology morphology;
    double cr, cc;      // centre
    double radius;      // base radius
    double outer;       // radius bounding the whole shape
    // blob
    double ecc = 1, orient = 0;
    // ambiguous lobes
    double a3 = 0, p3 = 0, a5 = 0, p5 = 0, a2 = 0, p2 = 0;
    // spicules
    std::vector<double> spike_angle, spike_len, spike_width;
    double core = 0;

    static LesionShape sample(Morphology m, double cr, double cc, double radius, Rng& rng) {
        LesionShape s;
        s.morphology = m;
        s.cr = cr;
        s.cc = cc;
        s.radius = radius;
        if (m == Morphology::Blob) {
            s.ecc = rng.uniform(0.65, 0.95);
            s.orient = rng.uniform(0.0, 3.14159265358979323846);
            s.outer = radius;
        } else if (m == Morphology::Ambiguous) {
            s.a3 = rng.uniform(0.22, 0.32);
            s.p3 = rng.uniform(0.0, 6.283185307179586);
            s.a5 = rng.uniform(0.14, 0.22);
            s.p5 = rng.uniform(0.0, 6.283185307179586);
            s.a2 = rng.uniform(0.06, 0.12);
            s.p2 = rng.uniform(0.0, 6.283185307179586);
            s.outer = radius * (1 + s.a3 + s.a5 + s.a2);
        } else {
            // Bulk-dominated core so spiculated masks have comparable mass
            // to the other morphologies; the spikes carry the shape cue.
            s.core = 0.85 * radius;
            const int n = int(rng.uniform_int(6, 9));
            for (int i = 0; i < n; ++i) {
                s.spike_angle.push_back(rng.uniform(0.0, 6.283185307179586));
                s.spike_len.push_back(radius * rng.uniform(1.25, 1.55));
                s.spike_width.push_back(rng.uniform(2.2, 3.0));
            }
            s.outer = radius * 1.55;
        }
        return s;
    }

    double field(double r, double c) const {
        const double dr = r - cr, dc = c - cc;
        const double dist = std::sqrt(dr * dr + dc * dc);
        const double edge = 1.2; // soft edge half-width in pixels
        if (morphology == Morphology::Blob) {
            const double ca = std::cos(orient), sa = std::sin(orient);
            const double u = ca * dr + sa * dc;
            const double v = -sa * dr + ca * dc;
            const double rr = std::sqrt(u * u + (v / ecc) * (v / ecc));
            return 0.5 - (rr - radius) / (2 * edge);
        }
        if (morphology == Morphology::Ambiguous) {
            const double theta = std::atan2(dc, dr);
            const double rim = radius * (1 + a3 * std::sin(3 * theta + p3) + a5 * std::sin(5 * theta + p5) +
                                         a2 * std::sin(2 * theta + p2));
            return 0.5 - (dist - rim) / (2 * edge);
        }
        // Spiculated: union of a core disk and tapered spikes.
        double best = 0.5 - (dist - core) / (2 * edge);
        const double theta = std::atan2(dc, dr);
        for (std::size_t i = 0; i < spike_angle.size(); ++i) {
            double dth = std::remainder(theta - spike_angle[i], 6.283185307179586);
            const double along = dist;
            if (along > spike_len[i] + edge) continue;
            // Perpendicular distance to the spike's centreline, tapering width.
            const double perp = std::abs(std::sin(dth)) * along;
            const double taper = spike_width[i] * (1.0 - 0.7 * along / spike_len[i]);
            if (std::cos(dth) <= 0) continue;
            const double cap = 0.5 - (along - spike_len[i]) / (2 * edge);
            const double side = 0.5 - (perp - taper) / (2 * edge);
            best = std::max(best, std::min(cap, side));
        }
        return best;
    }
};

inline bool masks_overlap(const Bitmap& a, const Bitmap& b) {
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        if (a.bits[i] && b.bits[i]) return true;
    return false;
}

inline bool mask_connected(const Bitmap& mask) {
    const std::int64_t n = mask.count();
    if (n == 0) return false;
    std::int64_t start = -1;
    for (std::size_t i = 0; i < mask.bits.size(); ++i)
        if (mask.bits[i]) {
            start = std::int64_t(i);
            break;
        }
    std::vector<std::uint8_t> seen(mask.bits.size(), 0);
    std::vector<std::int64_t> stack = {start};
    seen[std::size_t(start)] = 1;
    std::int64_t visited = 0;
    while (!stack.empty()) {
        std::int64_t p = stack.back();
        stack.pop_back();
        ++visited;
        const std::int64_t r = p / mask.width, c = p % mask.width;
        const std::int64_t nbr[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                        {0, 1},   {1, -1}, {1, 0},  {1, 1}};
        for (const auto& d : nbr) {
            const std::int64_t rr = r + d[0], cc = c + d[1];
            if (rr < 0 || rr >= mask.height || cc < 0 || cc >= mask.width) continue;
            const std::int64_t q = rr * mask.width + cc;
            if (mask.bits[std::size_t(q)] && !seen[std::size_t(q)]) {
                seen[std::size_t(q)] = 1;
                stack.push_back(q);
            }
        }
    }
    return visited == n;
}

} // namespace synth_detail

struct GeneratedImage {
    std::vector<double> pixels; // H*W in [0,1]
    ImageInfo info;
};

// Generates one image with 0-3 lesions. Deterministic given the Rng state.
inline GeneratedImage generate_image(const GeneratorConfig& cfg, bool biopsied, const std::string& image_id,
                                     Rng& rng) {
    using namespace synth_detail;
    const std::int64_t h = cfg.height, w = cfg.width;

    for (int attempt = 0; attempt < 8; ++attempt) {
        DensityField density = DensityField::sample(rng);
        const bool forced = cfg.density_override >= 0;

        int lesion_count = 0;
        if (biopsied) lesion_count = 1 + int(rng.categorical(cfg.lesion_count_probs));

        std::vector<LesionShape> shapes;
        std::vector<Bitmap> masks;
        std::vector<Morphology> morphs;
        bool placed_all = true;
        for (int li = 0; li < lesion_count; ++li) {
            const double pick = rng.uniform();
            Morphology m = pick < cfg.ambiguous_fraction ? Morphology::Ambiguous
                           : pick < cfg.ambiguous_fraction + cfg.blob_fraction ? Morphology::Blob
                                                                               : Morphology::Spiculated;
            bool placed = false;
            for (int tries = 0; tries < 40 && !placed; ++tries) {
                const double radius = rng.uniform(cfg.lesion_radius_min, cfg.lesion_radius_max);
                const double margin = radius * 2.0 + 8.0;
                if (2 * margin >= double(h) || 2 * margin >= double(w)) break;
                const double cr = rng.uniform(margin, double(h) - margin);
                const double cc = rng.uniform(margin, double(w) - margin);
                LesionShape shape = LesionShape::sample(m, cr, cc, radius, rng);
                Bitmap mask(h, w);
                const std::int64_t r0 = std::max<std::int64_t>(0, std::int64_t(cr - shape.outer - 3));
                const std::int64_t r1 = std::min<std::int64_t>(h - 1, std::int64_t(cr + shape.outer + 3));
                const std::int64_t c0 = std::max<std::int64_t>(0, std::int64_t(cc - shape.outer - 3));
                const std::int64_t c1 = std::min<std::int64_t>(w - 1, std::int64_t(cc + shape.outer + 3));
                for (std::int64_t r = r0; r <= r1; ++r)
                    for (std::int64_t c = c0; c <= c1; ++c)
                        if (shape.field(r + 0.5, c + 0.5) >= 0.5) mask.set(r, c);
                if (mask.count() < 12 || !mask_connected(mask)) continue;
                bool overlap = false;
                for (const auto& other : masks)
                    if (masks_overlap(mask, other)) {
                        overlap = true;
                        break;
                    }
                if (overlap) continue;
                shapes.push_back(std::move(shape));
                masks.push_back(std::move(mask));
                morphs.push_back(m);
                placed = true;
            }
            if (!placed) {
                placed_all = false;
                break;
            }
        }
        if (!placed_all) continue; // fresh geometry

        GeneratedImage out;
        out.info.id = image_id;
        out.info.biopsied = !masks.empty();
        out.info.height = h;
        out.info.width = w;
        out.pixels.assign(std::size_t(h * w), 0.0);

        // Background: flat mid-gray near lesions, density-modulated far away.
        for (std::int64_t r = 0; r < h; ++r) {
            for (std::int64_t c = 0; c < w; ++c) {
                double vis = 1.0;
                for (const auto& s : shapes) {
                    const double dr = r + 0.5 - s.cr, dc = c + 0.5 - s.cc;
                    const double dist = std::sqrt(dr * dr + dc * dc) - s.outer;
                    const double ramp = (dist - cfg.suppress_r0) / (cfg.suppress_r1 - cfg.suppress_r0);
                    vis = std::min(vis, std::max(0.0, std::min(1.0, ramp)));
                }
                const double d = forced ? cfg.density_override : density.at(r + 0.5, c + 0.5);
                double v = 0.5 + cfg.background_contrast * (d - 0.5) * vis;
                v += rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
                out.pixels[std::size_t(r * w + c)] = std::min(1.0, std::max(0.0, v));
            }
        }

        // Lesions render at one shared brightness with a soft edge and a
        // morphology-specific interior texture (identical for both labels).
        for (std::size_t li = 0; li < shapes.size(); ++li) {
            const auto& s = shapes[li];
            const std::int64_t r0 = std::max<std::int64_t>(0, std::int64_t(s.cr - s.outer - 3));
            const std::int64_t r1 = std::min<std::int64_t>(h - 1, std::int64_t(s.cr + s.outer + 3));
            const std::int64_t c0 = std::max<std::int64_t>(0, std::int64_t(s.cc - s.outer - 3));
            const std::int64_t c1 = std::min<std::int64_t>(w - 1, std::int64_t(s.cc + s.outer + 3));
            const double tex_phase = rng.uniform(0.0, 6.283185307179586);
            for (std::int64_t r = r0; r <= r1; ++r)
                for (std::int64_t c = c0; c <= c1; ++c) {
                    double f = s.field(r + 0.5, c + 0.5);
                    if (f <= 0) continue;
                    f = std::min(1.0, f);
                    const double dr = r + 0.5 - s.cr, dc = c + 0.5 - s.cc;
                    double tex = 0;
                    if (s.morphology == Morphology::Spiculated) {
                        tex = 0.09 * std::sin(7.0 * std::atan2(dc, dr) + tex_phase);
                    } else if (s.morphology == Morphology::Ambiguous) {
                        tex = 0.09 * std::sin(std::sqrt(dr * dr + dc * dc) * 1.4 + tex_phase);
                    }
                    auto& px = out.pixels[std::size_t(r * w + c)];
                    px = std::min(1.0, std::max(0.0, px * (1 - f) + (cfg.lesion_brightness + tex) * f));
                }
        }

        // Annotations: context level is the mean latent density over the mask.
        for (std::size_t li = 0; li < masks.size(); ++li) {
            LesionInfo les;
            les.id = cat(image_id, "_l", li);
            les.morphology = morphs[li];
            double acc = 0;
            std::int64_t n = 0;
            for (std::int64_t r = 0; r < h; ++r)
                for (std::int64_t c = 0; c < w; ++c)
                    if (masks[li].get(r, c)) {
                        acc += forced ? cfg.density_override : density.at(r + 0.5, c + 0.5);
                        ++n;
                    }
            les.context_level = acc / double(n);
            les.label = lesion_label_rule(les.morphology, les.context_level);
            les.mask = std::move(masks[li]);
            out.info.lesions.push_back(std::move(les));
        }
        return out;
    }
    fail("lesion placement failed repeatedly for image ", image_id);
}

// Generates the dataset on disk: images/, manifest.json. Splits are exact
// patient partitions (last 10% test, previous 10% val, rest train).
inline DatasetManifest generate_dataset(const GeneratorConfig& cfg, std::uint64_t seed,
                                        const std::string& out_dir, bool overwrite = false) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
        GLCN_CHECK(overwrite, "output directory not empty (pass overwrite): ", out_dir);
        fs::remove_all(out_dir);
    }
    fs::create_directories(out_dir + "/images");

    const std::int64_t n_patients = cfg.patients;
    const std::int64_t n_val = n_patients / 10;
    const std::int64_t n_test = n_patients / 10;
    const std::int64_t n_train = n_patients - n_val - n_test;

    DatasetManifest manifest;
    manifest.config_echo = cfg.to_json();
    manifest.seed = seed;
    manifest.root = out_dir;

    try {
        std::int64_t image_index = 0;
        for (std::int64_t p = 0; p < n_patients; ++p) {
            const std::string patient_id = cat("p_", p);
            for (std::int64_t k = 0; k < cfg.images_per_patient; ++k, ++image_index) {
                Rng rng = derive_rng(seed, {tag("image"), std::uint64_t(image_index)});
                const bool biopsied = rng.uniform() < cfg.biopsied_fraction;
                const std::string image_id = cat("img_", image_index);
                GeneratedImage gen = generate_image(cfg, biopsied, image_id, rng);
                gen.info.patient_id = patient_id;
                gen.info.side = (p % 2 == 0) ? "L" : "R";
                gen.info.path = cat("images/", image_id, ".gimg");
                save_gimg(out_dir + "/" + gen.info.path, cfg.height, cfg.width, gen.pixels);
                auto& split = p < n_train ? manifest.train : (p < n_train + n_val ? manifest.val : manifest.test);
                split.push_back(std::move(gen.info));
            }
        }
        save_manifest(manifest, out_dir);
    } catch (...) {
        fs::remove_all(out_dir); // no partial datasets
        throw;
    }
    return manifest;
}

} // namespace glcn
