#pragma once

// 16-bit grayscale raster format:
//   magic "GIMG" | u32 H | u32 W | u32 reserved(0) | H*W u16 little-endian
// Pixel value = round(intensity * 65535), intensity in [0,1].

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "glcn/common.hpp"

namespace glcn {

struct RasterImage {
    std::int64_t height = 0, width = 0;
    std::vector<float> pixels; // row-major, [0,1]
};

namespace detail {
inline void raster_put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
} // namespace detail

inline void save_gimg(const std::string& path, std::int64_t height, std::int64_t width,
                      const std::vector<double>& intensity) {
    GLCN_CHECK(std::int64_t(intensity.size()) == height * width, "raster size mismatch");
    std::string bytes;
    bytes.reserve(16 + intensity.size() * 2);
    bytes += "GIMG";
    detail::raster_put_u32(bytes, std::uint32_t(height));
    detail::raster_put_u32(bytes, std::uint32_t(width));
    detail::raster_put_u32(bytes, 0);
    for (double v : intensity) {
        double clamped = v < 0 ? 0 : (v > 1 ? 1 : v);
        auto q = std::uint16_t(clamped * 65535.0 + 0.5);
        bytes.push_back(char(q & 0xff));
        bytes.push_back(char((q >> 8) & 0xff));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("cannot open image for writing: ", path);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) fail("image write failed: ", path);
}

inline RasterImage load_gimg(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError(cat("image not found: ", path));
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    GLCN_CHECK(buf.size() >= 16 && buf.compare(0, 4, "GIMG") == 0, "not a GIMG raster: ", path);
    auto get_u32 = [&](std::size_t at) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[at + std::size_t(i)])) << (8 * i);
        return v;
    };
    RasterImage img;
    img.height = get_u32(4);
    img.width = get_u32(8);
    const std::size_t n = std::size_t(img.height) * std::size_t(img.width);
    GLCN_CHECK(buf.size() == 16 + 2 * n, "truncated GIMG raster: ", path);
    img.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t q = std::uint16_t(std::uint8_t(buf[16 + 2 * i])) |
                          std::uint16_t(std::uint8_t(buf[16 + 2 * i + 1])) << 8;
        img.pixels[i] = float(q) / 65535.0f;
    }
    return img;
}

} // namespace glcn
