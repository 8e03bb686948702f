#include <doctest.h>

#include <cmath>

#include "glcn/geometry.hpp"
#include "glcn/maps.hpp"
#include "glcn/rng.hpp"

#include "helpers.hpp"

using namespace glcn;

namespace {

// Closed-form area of the intersection of an axis-aligned window with a
// grid cell, as a fraction of the cell; the rotation-0 oracle.
double rect_cell_overlap(const Window& w, std::int64_t cell_r, std::int64_t cell_c, std::int64_t cell_h,
                         std::int64_t cell_w) {
    const double top = std::max(w.top, double(cell_r * cell_h));
    const double bottom = std::min(w.top + double(w.side), double((cell_r + 1) * cell_h));
    const double left = std::max(w.left, double(cell_c * cell_w));
    const double right = std::min(w.left + double(w.side), double((cell_c + 1) * cell_w));
    const double area = std::max(0.0, bottom - top) * std::max(0.0, right - left);
    return area / double(cell_h * cell_w);
}

} // namespace

TEST_CASE("location indicator basic cases") {
    // 64x64 image on a 4x4 grid; cells are 16x16.
    SUBCASE("window exactly covering cell (0,0)") {
        Window w{0, 0, 16, 0};
        Tensor<double> ind = location_indicator<double>(w, 64, 64, 4, 4);
        CHECK(ind.data[0] == doctest::Approx(1.0));
        for (std::size_t i = 1; i < ind.data.size(); ++i) CHECK(ind.data[i] == 0.0);
    }

    SUBCASE("cell-sized window centred on a four-cell corner") {
        Window w{8, 8, 16, 0};
        Tensor<double> ind = location_indicator<double>(w, 64, 64, 4, 4);
        CHECK(ind.data[0] == doctest::Approx(0.25));
        CHECK(ind.data[1] == doctest::Approx(0.25));
        CHECK(ind.data[4] == doctest::Approx(0.25));
        CHECK(ind.data[5] == doctest::Approx(0.25));
        double sum = 0;
        for (double v : ind.data) sum += v;
        CHECK(sum == doctest::Approx(1.0));
    }

    SUBCASE("entries stay in [0,1] and support is nonempty") {
        Rng rng(3);
        for (int t = 0; t < 50; ++t) {
            const std::int64_t side = rng.uniform_int(8, 40);
            Window w{double(rng.uniform_int(0, 64 - side)), double(rng.uniform_int(0, 64 - side)),
                     side, rng.uniform(-30.0, 30.0)};
            if (!window_in_bounds(w, 64, 64)) continue;
            Tensor<double> ind = location_indicator<double>(w, 64, 64, 4, 4);
            double sum = 0;
            for (double v : ind.data) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(sum > 0.0);
        }
    }
}

TEST_CASE("rotation-0 indicator matches the closed-form area oracle exactly") {
    Rng rng(11);
    const std::int64_t H = 96, W = 64, gh = 6, gw = 4;
    for (int t = 0; t < 200; ++t) {
        const std::int64_t side = rng.uniform_int(6, 48);
        Window w{double(rng.uniform_int(0, H - side)), double(rng.uniform_int(0, W - side)), side, 0};
        Tensor<double> ind = location_indicator<double>(w, H, W, gh, gw);
        for (std::int64_t i = 0; i < gh; ++i)
            for (std::int64_t j = 0; j < gw; ++j) {
                const double oracle = rect_cell_overlap(w, i, j, H / gh, W / gw);
                const double got = ind.data[std::size_t(i * gw + j)];
                // Integer-aligned windows make the raster exact; the spec
                // tolerance is one pixel per cell.
                CHECK(std::abs(got - oracle) <= 1.0 / double((H / gh) * (W / gw)));
                CHECK(got == doctest::Approx(oracle).epsilon(1e-12));
            }
    }
}

TEST_CASE("indicator mass equals footprint pixel count for rotated windows") {
    Rng rng(13);
    const std::int64_t H = 96, W = 64, gh = 6, gw = 4;
    const double per_cell = double((H / gh) * (W / gw));
    for (int t = 0; t < 60; ++t) {
        const std::int64_t side = rng.uniform_int(8, 40);
        Window w{double(rng.uniform_int(10, H - side - 10)), double(rng.uniform_int(10, W - side - 10)),
                 side, rng.uniform(-30.0, 30.0)};
        if (!window_in_bounds(w, H, W)) continue;
        Tensor<double> ind = location_indicator<double>(w, H, W, gh, gw);
        double mass = 0;
        for (double v : ind.data) mass += v;
        CHECK(mass * per_cell == doctest::Approx(double(window_footprint_pixels(w, H, W))).epsilon(1e-9));
    }
}

TEST_CASE("translating a window by one cell translates the support") {
    const std::int64_t H = 96, W = 64, gh = 6, gw = 4;
    Window a{17, 5, 20, 0};
    Window b{17 + 16, 5 + 16, 20, 0}; // one cell down, one right
    Tensor<double> ia = location_indicator<double>(a, H, W, gh, gw);
    Tensor<double> ib = location_indicator<double>(b, H, W, gh, gw);
    for (std::int64_t i = 0; i + 1 < gh; ++i)
        for (std::int64_t j = 0; j + 1 < gw; ++j)
            CHECK(ia.data[std::size_t(i * gw + j)] ==
                  doctest::Approx(ib.data[std::size_t((i + 1) * gw + j + 1)]).epsilon(1e-12));
}

TEST_CASE("embedding map replacement rule") {
    SUBCASE("zero embedding gives an all-zero map") {
        Tensor<double> ind({3, 2}, {0.5, 0, 0, 1, 0, 0.25});
        std::vector<double> h(32, 0.0);
        Tensor<double> emb = embedding_map(ind, h);
        for (double v : emb.data) CHECK(v == 0.0);
    }

    SUBCASE("single-cell support places h_k at that cell only") {
        Tensor<double> ind({2, 2}, {0.75, 0, 0, 0});
        std::vector<double> h(32, 0.0);
        h[3] = 7.0;
        Tensor<double> emb = embedding_map(ind, h);
        CHECK(emb.data[3] == 7.0);
        for (std::size_t p = 1; p < 4; ++p) CHECK(emb.data[p * 32 + 3] == 0.0);
        // Replacement is binary, not scaled by the 0.75 coverage.
        CHECK(emb.data[3] == doctest::Approx(7.0));
    }

    SUBCASE("support of every channel equals the indicator support") {
        Rng rng(7);
        for (int t = 0; t < 30; ++t) {
            Tensor<double> ind({4, 3});
            for (auto& v : ind.data) v = rng.uniform() < 0.4 ? rng.uniform(0.01, 1.0) : 0.0;
            std::vector<double> h(32);
            for (auto& v : h) v = rng.uniform(-2.0, 2.0);
            Tensor<double> emb = embedding_map(ind, h);
            for (std::int64_t p = 0; p < 12; ++p)
                for (std::int64_t k = 0; k < 32; ++k) {
                    const double expect = ind.data[std::size_t(p)] > 0 ? h[std::size_t(k)] : 0.0;
                    CHECK(emb.data[std::size_t(p * 32 + k)] == expect);
                }
        }
    }
}

TEST_CASE("assemble channel counts and lossless recovery") {
    Rng rng(21);
    Tensor<double> ind({4, 3});
    for (auto& v : ind.data) v = rng.uniform() < 0.5 ? rng.uniform(0.01, 1.0) : 0.0;
    SaliencyPair<double> sal;
    sal.malignant = glcn_test::rand_tensor<double>({4, 3}, rng, 0, 1);
    sal.benign = glcn_test::rand_tensor<double>({4, 3}, rng, 0, 1);
    std::vector<double> h(32);
    for (auto& v : h) v = rng.uniform(-2.0, 2.0);
    Tensor<double> emb = embedding_map(ind, h);

    struct Case {
        const char* spec;
        std::int64_t m;
    };
    for (auto [spec, m] : {Case{"indicator", 1}, Case{"saliency", 2}, Case{"indicator+saliency", 3},
                           Case{"embedding", 32}, Case{"indicator+embedding", 33},
                           Case{"saliency+embedding", 34}, Case{"indicator+saliency+embedding", 35}}) {
        MapSelection sel = MapSelection::parse(spec);
        CHECK(sel.channels() == m);
        AssembledInput<double> x = assemble(sel, &ind, &sal, &emb);
        CHECK(x.x.shape == Shape{4, 3, m});
        CHECK(std::int64_t(x.legend.size()) == m);

        if (sel.indicator) CHECK(extract_channel(x, "indicator").data == ind.data);
        if (sel.saliency) {
            CHECK(extract_channel(x, "saliency_malignant").data == sal.malignant.data);
            CHECK(extract_channel(x, "saliency_benign").data == sal.benign.data);
        }
        if (sel.embedding)
            for (std::int64_t k = 0; k < 32; ++k) {
                Tensor<double> ch = extract_channel(x, cat("embedding_", k));
                for (std::int64_t p = 0; p < 12; ++p)
                    CHECK(ch.data[std::size_t(p)] == emb.data[std::size_t(p * 32 + k)]);
            }
    }

    SUBCASE("grid mismatch is rejected") {
        Tensor<double> small({2, 2});
        MapSelection sel = MapSelection::parse("indicator+saliency");
        CHECK_THROWS_WITH_AS(assemble(sel, &small, &sal, static_cast<const Tensor<double>*>(nullptr)),
                             doctest::Contains("grid mismatch"), Error);
    }
}

TEST_CASE("patch extraction identities") {
    Rng rng(31);
    Tensor<float> image({40, 30});
    for (auto& v : image.data) v = float(rng.uniform());

    SUBCASE("angle 0, side == resolution is an exact crop") {
        Window w{7, 9, 12, 0};
        Tensor<float> patch = extract_patch(image.data.data(), 40, 30, w, 12);
        for (std::int64_t i = 0; i < 12; ++i)
            for (std::int64_t j = 0; j < 12; ++j)
                CHECK(patch.data[std::size_t(i * 12 + j)] == image.data[std::size_t((7 + i) * 30 + 9 + j)]);
    }

    SUBCASE("constant image stays constant under any rotation and resize") {
        Tensor<float> flat = Tensor<float>::full({40, 30}, 0.625f);
        Window w{6, 4, 20, 0};
        Tensor<float> patch = extract_patch(flat.data.data(), 40, 30, w, 10);
        for (float v : patch.data) CHECK(v == doctest::Approx(0.625f));
        Window wr{6, 4, 20, 17.0};
        Tensor<float> patch_r = extract_patch(flat.data.data(), 40, 30, wr, 10);
        for (float v : patch_r.data) CHECK(v == doctest::Approx(0.625f));
    }

    SUBCASE("RLE round-trip reproduces the mask") {
        for (int t = 0; t < 20; ++t) {
            Bitmap mask(17, 13);
            for (std::int64_t i = 0; i < 17 * 13; ++i)
                if (rng.uniform() < 0.3) mask.bits[std::size_t(i)] = 1;
            Bitmap back = rle_decode(rle_encode(mask), 17, 13);
            CHECK(back.bits == mask.bits);
        }
    }
}
