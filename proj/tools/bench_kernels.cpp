// Micro-benchmark for the conv kernels; used to size desk-scale training
// budgets. Not part of the test suite.

#include <chrono>
#include <cstdio>

#include "glcn/kernels.hpp"
#include "glcn/rng.hpp"
#include "glcn/threading.hpp"

using namespace glcn;

template <typename T>
static Tensor<T> rand_tensor(Shape s, Rng& rng) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data) v = T(rng.uniform(-1, 1));
    return t;
}

template <typename T>
static void bench(const char* label, std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t ci,
                  std::int64_t co, std::int64_t stride, int iters) {
    Rng rng(1);
    Tensor<T> x = rand_tensor<T>({n, h, w, ci}, rng);
    Tensor<T> k = rand_tensor<T>({3, 3, ci, co}, rng);
    Tensor<T> b = rand_tensor<T>({co}, rng);
    ConvGeometry g = conv_geometry(x.shape, k.shape, Padding::Same, stride);

    auto t0 = std::chrono::steady_clock::now();
    Tensor<T> out;
    for (int i = 0; i < iters; ++i) out = conv2d_forward(x, k, b, Padding::Same, stride);
    auto t1 = std::chrono::steady_clock::now();
    Tensor<T> gin;
    for (int i = 0; i < iters; ++i) gin = conv2d_backward_input(out, k, g);
    auto t2 = std::chrono::steady_clock::now();
    Tensor<T> gk, gb;
    for (int i = 0; i < iters; ++i) conv2d_backward_params(x, out, g, gk, gb);
    auto t3 = std::chrono::steady_clock::now();

    double macs = double(n) * g.out_h * g.out_w * 9 * ci * co * iters;
    auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
    std::printf("%-28s fwd %7.2f GMAC/s   bwd_in %7.2f GMAC/s   bwd_k %7.2f GMAC/s\n", label,
                macs / secs(t0, t1) / 1e9, macs / secs(t1, t2) / 1e9, macs / secs(t2, t3) / 1e9);
}

int main(int argc, char** argv) {
    int threads = argc > 1 ? std::atoi(argv[1]) : 2;
    ThreadPool::instance().set_threads(threads);
    std::printf("threads: %d\n", threads);

    bench<float>("f32 floc b1 64x64x1->16", 25, 64, 64, 1, 16, 1, 20);
    bench<float>("f32 floc b2 32x32x16->32", 25, 32, 32, 16, 32, 1, 20);
    bench<float>("f32 floc b3 16x16x32->64", 25, 16, 16, 32, 64, 1, 20);
    bench<float>("f32 floc b4 8x8x64->128", 25, 8, 8, 64, 128, 1, 20);
    bench<float>("f32 agg 23x15x34->32", 100, 23, 15, 34, 32, 1, 20);
    bench<float>("f32 agg 23x15x32->32", 100, 23, 15, 32, 32, 1, 20);
    bench<float>("f32 ctx 368x240x1->8 s2", 8, 368, 240, 1, 8, 2, 10);
    bench<float>("f32 ctx 184x120x8->16 s2", 8, 184, 120, 8, 16, 2, 10);
    bench<float>("f32 ctx 92x60x16->32 s2", 8, 92, 60, 16, 32, 2, 10);
    bench<double>("f64 floc b2 32x32x16->32", 25, 32, 32, 16, 32, 1, 10);
    return 0;
}
