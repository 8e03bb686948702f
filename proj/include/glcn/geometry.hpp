#pragma once

// Cropping-window geometry shared by the patch pipeline and map assembly.
//
// A Window is an axis-aligned square [top,top+side) x [left,left+side) in
// pixel coordinates, rotated by angle_deg about its centre. Pixel (r,c)
// spans [r,r+1) x [c,c+1); its centre sits at (r+0.5, c+0.5). A pixel
// belongs to the window footprint iff its centre lies inside the rotated
// square, so at rotation 0 an integer-aligned window covers exactly
// side*side pixels and footprints translate exactly with the window.

#include <cmath>
#include <cstdint>
#include <vector>

#include "glcn/common.hpp"
#include "glcn/tensor.hpp"

namespace glcn {

struct Window {
    double top = 0;    // row of the unrotated top edge
    double left = 0;   // column of the unrotated left edge
    std::int64_t side = 0;
    double angle_deg = 0;

    double center_row() const { return top + double(side) / 2.0; }
    double center_col() const { return left + double(side) / 2.0; }
};

struct BoundingBox {
    double top, left, bottom, right;
};

inline BoundingBox window_bbox(const Window& w) {
    const double rad = w.angle_deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cr = w.center_row(), cc = w.center_col();
    const double h = double(w.side) / 2.0;
    BoundingBox box{cr, cc, cr, cc};
    for (int i = 0; i < 4; ++i) {
        const double dr = (i & 1) ? h : -h;
        const double dc = (i & 2) ? h : -h;
        const double r = cr + c * dr - s * dc;
        const double col = cc + s * dr + c * dc;
        box.top = std::min(box.top, r);
        box.bottom = std::max(box.bottom, r);
        box.left = std::min(box.left, col);
        box.right = std::max(box.right, col);
    }
    return box;
}

inline bool window_in_bounds(const Window& w, std::int64_t height, std::int64_t width) {
    BoundingBox b = window_bbox(w);
    return b.top >= 0 && b.left >= 0 && b.bottom <= double(height) && b.right <= double(width);
}

// Is the point (row, col) inside the rotated square?
inline bool window_contains(const Window& w, double row, double col) {
    const double rad = w.angle_deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double dr = row - w.center_row();
    const double dc = col - w.center_col();
    // Inverse rotation back into the unrotated frame.
    const double ur = c * dr + s * dc;
    const double uc = -s * dr + c * dc;
    const double h = double(w.side) / 2.0;
    return ur >= -h && ur < h && uc >= -h && uc < h;
}

// Visits every pixel whose centre lies inside the window, clipped to the
// image; iteration order is row-major and deterministic.
template <typename Fn>
void for_each_covered_pixel(const Window& w, std::int64_t height, std::int64_t width, Fn&& fn) {
    BoundingBox b = window_bbox(w);
    const std::int64_t r0 = std::max<std::int64_t>(0, std::int64_t(std::floor(b.top - 0.5)));
    const std::int64_t r1 = std::min<std::int64_t>(height - 1, std::int64_t(std::ceil(b.bottom)));
    const std::int64_t c0 = std::max<std::int64_t>(0, std::int64_t(std::floor(b.left - 0.5)));
    const std::int64_t c1 = std::min<std::int64_t>(width - 1, std::int64_t(std::ceil(b.right)));
    if (w.angle_deg == 0.0) {
        // Axis-aligned fast path: half-open interval test per axis.
        for (std::int64_t r = r0; r <= r1; ++r) {
            if (r + 0.5 < w.top || r + 0.5 >= w.top + double(w.side)) continue;
            for (std::int64_t c = c0; c <= c1; ++c) {
                if (c + 0.5 < w.left || c + 0.5 >= w.left + double(w.side)) continue;
                fn(r, c);
            }
        }
        return;
    }
    for (std::int64_t r = r0; r <= r1; ++r)
        for (std::int64_t c = c0; c <= c1; ++c)
            if (window_contains(w, r + 0.5, c + 0.5)) fn(r, c);
}

inline std::int64_t window_footprint_pixels(const Window& w, std::int64_t height, std::int64_t width) {
    std::int64_t count = 0;
    for_each_covered_pixel(w, height, width, [&](std::int64_t, std::int64_t) { ++count; });
    return count;
}

// Bilinear sample of a single-channel image at a continuous point given in
// pixel coordinates; indices are clamped at the border.
template <typename T>
T bilinear_sample(const T* image, std::int64_t height, std::int64_t width, double row, double col) {
    const double x = row - 0.5, y = col - 0.5;
    std::int64_t i0 = std::int64_t(std::floor(x)), j0 = std::int64_t(std::floor(y));
    const double fi = x - double(i0), fj = y - double(j0);
    std::int64_t i1 = i0 + 1, j1 = j0 + 1;
    i0 = std::clamp<std::int64_t>(i0, 0, height - 1);
    i1 = std::clamp<std::int64_t>(i1, 0, height - 1);
    j0 = std::clamp<std::int64_t>(j0, 0, width - 1);
    j1 = std::clamp<std::int64_t>(j1, 0, width - 1);
    const double v00 = double(image[i0 * width + j0]);
    const double v01 = double(image[i0 * width + j1]);
    const double v10 = double(image[i1 * width + j0]);
    const double v11 = double(image[i1 * width + j1]);
    return T((1 - fi) * ((1 - fj) * v00 + fj * v01) + fi * ((1 - fj) * v10 + fj * v11));
}

// Extracts the window content under rotation and resizes it to res x res
// with bilinear interpolation. Output is [res, res, 1].
template <typename T>
Tensor<T> extract_patch(const T* image, std::int64_t height, std::int64_t width, const Window& w,
                        std::int64_t res) {
    GLCN_CHECK(res >= 1, "patch resolution must be positive");
    Tensor<T> out({res, res, 1});
    const double rad = w.angle_deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cr = w.center_row(), cc = w.center_col();
    const double scale = double(w.side) / double(res);
    for (std::int64_t i = 0; i < res; ++i) {
        for (std::int64_t j = 0; j < res; ++j) {
            // Local offsets inside the unrotated square, then rotate out.
            const double ur = (double(i) + 0.5) * scale - double(w.side) / 2.0;
            const double uc = (double(j) + 0.5) * scale - double(w.side) / 2.0;
            const double row = cr + c * ur - s * uc;
            const double col = cc + s * ur + c * uc;
            out.data[std::size_t((i * res + j))] = bilinear_sample(image, height, width, row, col);
        }
    }
    return out;
}

// Binary mask with RLE codec used by dataset manifests.
struct Bitmap {
    std::int64_t height = 0, width = 0;
    std::vector<std::uint8_t> bits;

    Bitmap() = default;
    Bitmap(std::int64_t h, std::int64_t w) : height(h), width(w), bits(std::size_t(h * w), 0) {}

    bool get(std::int64_t r, std::int64_t c) const { return bits[std::size_t(r * width + c)] != 0; }
    void set(std::int64_t r, std::int64_t c, bool v = true) { bits[std::size_t(r * width + c)] = v ? 1 : 0; }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto b : bits) n += b != 0;
        return n;
    }
};

// Run-length encoding over the flattened row-major mask: [start, length] pairs.
inline std::vector<std::pair<std::int64_t, std::int64_t>> rle_encode(const Bitmap& mask) {
    std::vector<std::pair<std::int64_t, std::int64_t>> runs;
    const std::int64_t n = std::int64_t(mask.bits.size());
    std::int64_t i = 0;
    while (i < n) {
        if (!mask.bits[std::size_t(i)]) {
            ++i;
            continue;
        }
        std::int64_t start = i;
        while (i < n && mask.bits[std::size_t(i)]) ++i;
        runs.emplace_back(start, i - start);
    }
    return runs;
}

inline Bitmap rle_decode(const std::vector<std::pair<std::int64_t, std::int64_t>>& runs,
                         std::int64_t height, std::int64_t width) {
    Bitmap mask(height, width);
    const std::int64_t n = height * width;
    for (const auto& [start, len] : runs) {
        GLCN_CHECK(start >= 0 && len > 0 && start + len <= n, "RLE run out of range");
        for (std::int64_t i = start; i < start + len; ++i) mask.bits[std::size_t(i)] = 1;
    }
    return mask;
}

inline bool window_overlaps_mask(const Window& w, const Bitmap& mask) {
    bool hit = false;
    BoundingBox b = window_bbox(w);
    const std::int64_t r0 = std::max<std::int64_t>(0, std::int64_t(std::floor(b.top - 0.5)));
    const std::int64_t r1 = std::min<std::int64_t>(mask.height - 1, std::int64_t(std::ceil(b.bottom)));
    for (std::int64_t r = r0; r <= r1 && !hit; ++r)
        for (std::int64_t c = std::max<std::int64_t>(0, std::int64_t(std::floor(b.left - 0.5)));
             c <= std::min<std::int64_t>(mask.width - 1, std::int64_t(std::ceil(b.right))); ++c)
            if (mask.get(r, c) && window_contains(w, r + 0.5, c + 0.5)) {
                hit = true;
                break;
            }
    return hit;
}

} // namespace glcn
