#pragma once

// Forward and backward math for every layer the networks need. These are
// plain functions over Tensor<T>; the autodiff tape wraps them.
//
// Performance notes that matter here:
//  - innermost loops run over the channel dimension, which is contiguous,
//    and are written accumulator-style (no loop-carried dependency) so the
//    compiler can vectorize without reassociating float math;
//  - batch-level parallelism always reduces partial results in sample
//    order, keeping outputs independent of the worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "glcn/tensor.hpp"
#include "glcn/threading.hpp"

namespace glcn {

enum class Padding { Same, Valid };

struct ConvGeometry {
    std::int64_t batch, in_h, in_w, in_c;
    std::int64_t k, out_c;
    std::int64_t stride;
    std::int64_t out_h, out_w;
    std::int64_t pad_top, pad_left;
    bool batched; // false when the input was rank-3 [H,W,C]
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernels, Padding padding,
                                  std::int64_t stride) {
    GLCN_CHECK(input.size() == 3 || input.size() == 4, "conv2d input must be [H,W,C] or [N,H,W,C], got ",
               shape_str(input));
    GLCN_CHECK(kernels.size() == 4, "conv2d kernels must be [K,K,Cin,Cout], got ", shape_str(kernels));
    GLCN_CHECK(stride >= 1, "conv2d stride must be >= 1");
    ConvGeometry g{};
    g.batched = input.size() == 4;
    g.batch = g.batched ? input[0] : 1;
    g.in_h = input[input.size() - 3];
    g.in_w = input[input.size() - 2];
    g.in_c = input[input.size() - 1];
    g.k = kernels[0];
    g.out_c = kernels[3];
    g.stride = stride;
    GLCN_CHECK(kernels[0] == kernels[1], "conv2d kernels must be square, got ", shape_str(kernels));
    GLCN_CHECK(g.k % 2 == 1, "conv2d kernel size must be odd, got ", g.k);
    GLCN_CHECK(kernels[2] == g.in_c, "conv2d channel mismatch: input has ", g.in_c,
               " channels, kernels expect ", kernels[2], " (kernels ", shape_str(kernels), ")");
    if (padding == Padding::Valid) {
        GLCN_CHECK(g.in_h >= g.k && g.in_w >= g.k, "conv2d valid padding needs input >= kernel, got input ",
                   shape_str(input), " kernel ", g.k);
        g.out_h = (g.in_h - g.k) / stride + 1;
        g.out_w = (g.in_w - g.k) / stride + 1;
        g.pad_top = 0;
        g.pad_left = 0;
    } else {
        g.out_h = (g.in_h + stride - 1) / stride;
        g.out_w = (g.in_w + stride - 1) / stride;
        std::int64_t pad_h = std::max<std::int64_t>((g.out_h - 1) * stride + g.k - g.in_h, 0);
        std::int64_t pad_w = std::max<std::int64_t>((g.out_w - 1) * stride + g.k - g.in_w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    }
    return g;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                         Padding padding, std::int64_t stride = 1) {
    ConvGeometry g = conv_geometry(input.shape, kernels.shape, padding, stride);
    GLCN_CHECK(bias.shape == Shape{g.out_c}, "conv2d bias must be [Cout]=[", g.out_c, "], got ",
               shape_str(bias.shape));
    Shape out_shape = g.batched ? Shape{g.batch, g.out_h, g.out_w, g.out_c}
                                : Shape{g.out_h, g.out_w, g.out_c};
    Tensor<T> out(out_shape);

    const T* in = input.data.data();
    const T* kw = kernels.data.data();
    const T* bp = bias.data.data();
    T* op = out.data.data();
    const std::int64_t ic = g.in_c, oc = g.out_c, k = g.k, s = g.stride;
    const std::int64_t in_row = g.in_w * ic, in_img = g.in_h * in_row;
    const std::int64_t out_row = g.out_w * oc, out_img = g.out_h * out_row;

    parallel_for(g.batch * g.out_h, [&](std::int64_t ny) {
        const std::int64_t n = ny / g.out_h, yo = ny % g.out_h;
        T* orow = op + n * out_img + yo * out_row;
        for (std::int64_t xo = 0; xo < g.out_w; ++xo) {
            T* acc = orow + xo * oc;
            for (std::int64_t c = 0; c < oc; ++c) acc[c] = bp[c];
        }
        for (std::int64_t dy = 0; dy < k; ++dy) {
            const std::int64_t yi = yo * s - g.pad_top + dy;
            if (yi < 0 || yi >= g.in_h) continue;
            const T* irow = in + n * in_img + yi * in_row;
            const T* krow = kw + dy * k * ic * oc;
            for (std::int64_t xo = 0; xo < g.out_w; ++xo) {
                T* acc = orow + xo * oc;
                for (std::int64_t dx = 0; dx < k; ++dx) {
                    const std::int64_t xi = xo * s - g.pad_left + dx;
                    if (xi < 0 || xi >= g.in_w) continue;
                    const T* ipix = irow + xi * ic;
                    const T* kmat = krow + dx * ic * oc;
                    for (std::int64_t c = 0; c < ic; ++c) {
                        const T v = ipix[c];
                        const T* kvec = kmat + c * oc;
                        for (std::int64_t co = 0; co < oc; ++co) acc[co] += v * kvec[co];
                    }
                }
            }
        }
    });
    return out;
}

// Gradient w.r.t. the conv input, written gather-style over input rows so
// parallel rows never write the same location.
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& kernels,
                                const ConvGeometry& g) {
    Shape in_shape = g.batched ? Shape{g.batch, g.in_h, g.in_w, g.in_c}
                               : Shape{g.in_h, g.in_w, g.in_c};
    Tensor<T> grad_in(in_shape);

    const std::int64_t ic = g.in_c, oc = g.out_c, k = g.k, s = g.stride;
    // Transposed copy [K,K,Cout,Cin] so the innermost axpy runs over ci.
    std::vector<T> kt(static_cast<std::size_t>(k * k * oc * ic));
    for (std::int64_t dy = 0; dy < k; ++dy)
        for (std::int64_t dx = 0; dx < k; ++dx)
            for (std::int64_t c = 0; c < ic; ++c)
                for (std::int64_t co = 0; co < oc; ++co)
                    kt[std::size_t(((dy * k + dx) * oc + co) * ic + c)] =
                        kernels.data[std::size_t(((dy * k + dx) * ic + c) * oc + co)];

    const T* gp = grad_out.data.data();
    T* gi = grad_in.data.data();
    const std::int64_t in_row = g.in_w * ic, in_img = g.in_h * in_row;
    const std::int64_t out_row = g.out_w * oc, out_img = g.out_h * out_row;

    parallel_for(g.batch * g.in_h, [&](std::int64_t ny) {
        const std::int64_t n = ny / g.in_h, yi = ny % g.in_h;
        T* grow = gi + n * in_img + yi * in_row;
        for (std::int64_t dy = 0; dy < k; ++dy) {
            const std::int64_t ty = yi + g.pad_top - dy;
            if (ty < 0 || ty % s != 0) continue;
            const std::int64_t yo = ty / s;
            if (yo >= g.out_h) continue;
            const T* gorow = gp + n * out_img + yo * out_row;
            for (std::int64_t xi = 0; xi < g.in_w; ++xi) {
                T* acc = grow + xi * ic;
                for (std::int64_t dx = 0; dx < k; ++dx) {
                    const std::int64_t tx = xi + g.pad_left - dx;
                    if (tx < 0 || tx % s != 0) continue;
                    const std::int64_t xo = tx / s;
                    if (xo >= g.out_w) continue;
                    const T* gpix = gorow + xo * oc;
                    const T* kmat = kt.data() + ((dy * k + dx) * oc) * ic;
                    for (std::int64_t co = 0; co < oc; ++co) {
                        const T v = gpix[co];
                        const T* kvec = kmat + co * ic;
                        for (std::int64_t c = 0; c < ic; ++c) acc[c] += v * kvec[c];
                    }
                }
            }
        }
    });
    return grad_in;
}

// Gradients w.r.t. kernels and bias. Per-sample partial buffers are merged
// in sample order, independent of the worker count.
template <typename T>
void conv2d_backward_params(const Tensor<T>& input, const Tensor<T>& grad_out, const ConvGeometry& g,
                            Tensor<T>& grad_kernels, Tensor<T>& grad_bias) {
    const std::int64_t ic = g.in_c, oc = g.out_c, k = g.k, s = g.stride;
    const std::int64_t ksz = k * k * ic * oc;
    grad_kernels = Tensor<T>(Shape{k, k, ic, oc});
    grad_bias = Tensor<T>(Shape{oc});

    const T* in = input.data.data();
    const T* gp = grad_out.data.data();
    const std::int64_t in_row = g.in_w * ic, in_img = g.in_h * in_row;
    const std::int64_t out_row = g.out_w * oc, out_img = g.out_h * out_row;

    std::vector<std::vector<T>> partials(static_cast<std::size_t>(g.batch));
    parallel_for(g.batch, [&](std::int64_t n) {
        std::vector<T>& part = partials[std::size_t(n)];
        part.assign(std::size_t(ksz), T(0));
        for (std::int64_t yo = 0; yo < g.out_h; ++yo) {
            const T* gorow = gp + n * out_img + yo * out_row;
            for (std::int64_t dy = 0; dy < k; ++dy) {
                const std::int64_t yi = yo * s - g.pad_top + dy;
                if (yi < 0 || yi >= g.in_h) continue;
                const T* irow = in + n * in_img + yi * in_row;
                T* prow = part.data() + dy * k * ic * oc;
                for (std::int64_t xo = 0; xo < g.out_w; ++xo) {
                    const T* gpix = gorow + xo * oc;
                    for (std::int64_t dx = 0; dx < k; ++dx) {
                        const std::int64_t xi = xo * s - g.pad_left + dx;
                        if (xi < 0 || xi >= g.in_w) continue;
                        const T* ipix = irow + xi * ic;
                        T* pmat = prow + dx * ic * oc;
                        for (std::int64_t c = 0; c < ic; ++c) {
                            const T v = ipix[c];
                            T* pvec = pmat + c * oc;
                            for (std::int64_t co = 0; co < oc; ++co) pvec[co] += v * gpix[co];
                        }
                    }
                }
            }
        }
    });
    T* gk = grad_kernels.data.data();
    for (std::int64_t n = 0; n < g.batch; ++n) {
        const std::vector<T>& part = partials[std::size_t(n)];
        for (std::int64_t i = 0; i < ksz; ++i) gk[i] += part[std::size_t(i)];
    }
    T* gb = grad_bias.data.data();
    for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t yo = 0; yo < g.out_h; ++yo)
            for (std::int64_t xo = 0; xo < g.out_w; ++xo) {
                const T* gpix = gp + n * out_img + yo * out_row + xo * oc;
                for (std::int64_t co = 0; co < oc; ++co) gb[co] += gpix[co];
            }
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class BnMode { Train, Eval };

template <typename T>
struct BnState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
    std::int64_t updates = 0;
    bool ready = false; // set by a train-mode pass or by model construction

    bool initialized() const { return ready; }
    void init(std::int64_t channels) {
        running_mean.assign(std::size_t(channels), T(0));
        running_var.assign(std::size_t(channels), T(1));
        updates = 0;
        ready = false;
    }
};

template <typename T>
struct BnSaved {
    std::vector<T> x_hat;   // normalized input, same size as data
    std::vector<T> inv_std; // per channel
    std::int64_t rows = 0;
    std::int64_t channels = 0;
    BnMode mode = BnMode::Train;
};

// Channels are the last dimension; statistics reduce over everything else.
template <typename T>
Tensor<T> batch_norm_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                             BnState<T>& state, BnMode mode, T epsilon, T momentum,
                             BnSaved<T>* saved = nullptr) {
    GLCN_CHECK(input.rank() >= 2, "batch_norm input must have rank >= 2, got ", shape_str(input.shape));
    GLCN_CHECK(epsilon > 0, "batch_norm epsilon must be > 0");
    const std::int64_t c = input.shape.back();
    const std::int64_t rows = input.numel() / c;
    GLCN_CHECK(gamma.shape == Shape{c} && beta.shape == Shape{c}, "batch_norm gamma/beta must be [",
               c, "], got ", shape_str(gamma.shape), " and ", shape_str(beta.shape));
    if (state.running_mean.empty()) state.init(c);

    std::vector<T> mean(std::size_t(c), T(0)), var(std::size_t(c), T(0));
    const T* in = input.data.data();
    if (mode == BnMode::Train) {
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* row = in + r * c;
            for (std::int64_t j = 0; j < c; ++j) mean[std::size_t(j)] += row[j];
        }
        for (std::int64_t j = 0; j < c; ++j) mean[std::size_t(j)] /= T(rows);
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* row = in + r * c;
            for (std::int64_t j = 0; j < c; ++j) {
                T d = row[j] - mean[std::size_t(j)];
                var[std::size_t(j)] += d * d;
            }
        }
        for (std::int64_t j = 0; j < c; ++j) var[std::size_t(j)] /= T(rows);
        for (std::int64_t j = 0; j < c; ++j) {
            state.running_mean[std::size_t(j)] =
                (T(1) - momentum) * state.running_mean[std::size_t(j)] + momentum * mean[std::size_t(j)];
            state.running_var[std::size_t(j)] =
                (T(1) - momentum) * state.running_var[std::size_t(j)] + momentum * var[std::size_t(j)];
        }
        state.updates += 1;
        state.ready = true;
    } else {
        GLCN_CHECK(state.initialized(), "batch_norm eval mode requires initialized running statistics");
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<T> inv_std(static_cast<std::size_t>(c));
    for (std::int64_t j = 0; j < c; ++j) inv_std[std::size_t(j)] = T(1) / std::sqrt(var[std::size_t(j)] + epsilon);

    Tensor<T> out(input.shape);
    if (saved) {
        saved->x_hat.resize(input.data.size());
        saved->inv_std = inv_std;
        saved->rows = rows;
        saved->channels = c;
        saved->mode = mode;
    }
    T* op = out.data.data();
    T* xh = saved ? saved->x_hat.data() : nullptr;
    const T* gm = gamma.data.data();
    const T* bt = beta.data.data();
    parallel_for(rows, [&](std::int64_t r) {
        const T* row = in + r * c;
        T* orow = op + r * c;
        T* xrow = xh ? xh + r * c : nullptr;
        for (std::int64_t j = 0; j < c; ++j) {
            T norm = (row[j] - mean[std::size_t(j)]) * inv_std[std::size_t(j)];
            if (xrow) xrow[j] = norm;
            orow[j] = gm[j] * norm + bt[j];
        }
    });
    return out;
}

template <typename T>
void batch_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma, const BnSaved<T>& saved,
                         Tensor<T>& grad_in, Tensor<T>& grad_gamma, Tensor<T>& grad_beta) {
    const std::int64_t c = saved.channels, rows = saved.rows;
    grad_gamma = Tensor<T>(Shape{c});
    grad_beta = Tensor<T>(Shape{c});
    grad_in = Tensor<T>(grad_out.shape);

    const T* gp = grad_out.data.data();
    const T* xh = saved.x_hat.data();
    std::vector<T> sum_g(std::size_t(c), T(0)), sum_gx(std::size_t(c), T(0));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* grow = gp + r * c;
        const T* xrow = xh + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
            sum_g[std::size_t(j)] += grow[j];
            sum_gx[std::size_t(j)] += grow[j] * xrow[j];
        }
    }
    for (std::int64_t j = 0; j < c; ++j) {
        grad_beta.data[std::size_t(j)] = sum_g[std::size_t(j)];
        grad_gamma.data[std::size_t(j)] = sum_gx[std::size_t(j)];
    }

    const T* gm = gamma.data.data();
    T* gi = grad_in.data.data();
    if (saved.mode == BnMode::Train) {
        const T inv_rows = T(1) / T(rows);
        parallel_for(rows, [&](std::int64_t r) {
            const T* grow = gp + r * c;
            const T* xrow = xh + r * c;
            T* irow = gi + r * c;
            for (std::int64_t j = 0; j < c; ++j) {
                T term = grow[j] - sum_g[std::size_t(j)] * inv_rows - xrow[j] * sum_gx[std::size_t(j)] * inv_rows;
                irow[j] = gm[j] * saved.inv_std[std::size_t(j)] * term;
            }
        });
    } else {
        parallel_for(rows, [&](std::int64_t r) {
            const T* grow = gp + r * c;
            T* irow = gi + r * c;
            for (std::int64_t j = 0; j < c; ++j) irow[j] = gm[j] * saved.inv_std[std::size_t(j)] * grow[j];
        });
    }
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input) {
    GLCN_CHECK(input.rank() == 3 || input.rank() == 4, "global_avg_pool input must be [H,W,C] or [N,H,W,C]");
    const bool batched = input.rank() == 4;
    const std::int64_t n = batched ? input.shape[0] : 1;
    const std::int64_t h = input.shape[input.rank() - 3];
    const std::int64_t w = input.shape[input.rank() - 2];
    const std::int64_t c = input.shape.back();
    Tensor<T> out(batched ? Shape{n, c} : Shape{c});
    const T* in = input.data.data();
    T* op = out.data.data();
    const T scale = T(1) / T(h * w);
    parallel_for(n, [&](std::int64_t i) {
        T* acc = op + i * c;
        const T* base = in + i * h * w * c;
        for (std::int64_t p = 0; p < h * w; ++p) {
            const T* pix = base + p * c;
            for (std::int64_t j = 0; j < c; ++j) acc[j] += pix[j];
        }
        for (std::int64_t j = 0; j < c; ++j) acc[j] *= scale;
    });
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& in_shape) {
    Tensor<T> grad_in(in_shape);
    const bool batched = in_shape.size() == 4;
    const std::int64_t n = batched ? in_shape[0] : 1;
    const std::int64_t h = in_shape[in_shape.size() - 3];
    const std::int64_t w = in_shape[in_shape.size() - 2];
    const std::int64_t c = in_shape.back();
    const T scale = T(1) / T(h * w);
    const T* gp = grad_out.data.data();
    T* gi = grad_in.data.data();
    parallel_for(n, [&](std::int64_t i) {
        const T* g = gp + i * c;
        T* base = gi + i * h * w * c;
        for (std::int64_t p = 0; p < h * w; ++p) {
            T* pix = base + p * c;
            for (std::int64_t j = 0; j < c; ++j) pix[j] = g[j] * scale;
        }
    });
    return grad_in;
}

// 2x2 mean downsample, stride 2; spatial dims must be even.
template <typename T>
Tensor<T> avg_pool2_forward(const Tensor<T>& input) {
    GLCN_CHECK(input.rank() == 3 || input.rank() == 4, "avg_pool2 input must be [H,W,C] or [N,H,W,C]");
    const bool batched = input.rank() == 4;
    const std::int64_t n = batched ? input.shape[0] : 1;
    const std::int64_t h = input.shape[input.rank() - 3];
    const std::int64_t w = input.shape[input.rank() - 2];
    const std::int64_t c = input.shape.back();
    GLCN_CHECK(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims, got ", h, "x", w);
    Shape out_shape = batched ? Shape{n, h / 2, w / 2, c} : Shape{h / 2, w / 2, c};
    Tensor<T> out(out_shape);
    const T* in = input.data.data();
    T* op = out.data.data();
    const std::int64_t oh = h / 2, ow = w / 2;
    parallel_for(n * oh, [&](std::int64_t ny) {
        const std::int64_t i = ny / oh, y = ny % oh;
        const T* r0 = in + ((i * h + 2 * y) * w) * c;
        const T* r1 = r0 + w * c;
        T* orow = op + (i * oh + y) * ow * c;
        for (std::int64_t x = 0; x < ow; ++x) {
            const T* p00 = r0 + (2 * x) * c;
            const T* p01 = p00 + c;
            const T* p10 = r1 + (2 * x) * c;
            const T* p11 = p10 + c;
            T* o = orow + x * c;
            for (std::int64_t j = 0; j < c; ++j) o[j] = (p00[j] + p01[j] + p10[j] + p11[j]) * T(0.25);
        }
    });
    return out;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& grad_out, const Shape& in_shape) {
    Tensor<T> grad_in(in_shape);
    const bool batched = in_shape.size() == 4;
    const std::int64_t n = batched ? in_shape[0] : 1;
    const std::int64_t h = in_shape[in_shape.size() - 3];
    const std::int64_t w = in_shape[in_shape.size() - 2];
    const std::int64_t c = in_shape.back();
    const std::int64_t oh = h / 2, ow = w / 2;
    const T* gp = grad_out.data.data();
    T* gi = grad_in.data.data();
    parallel_for(n * oh, [&](std::int64_t ny) {
        const std::int64_t i = ny / oh, y = ny % oh;
        T* r0 = gi + ((i * h + 2 * y) * w) * c;
        T* r1 = r0 + w * c;
        const T* grow = gp + (i * oh + y) * ow * c;
        for (std::int64_t x = 0; x < ow; ++x) {
            const T* g = grow + x * c;
            T* p00 = r0 + (2 * x) * c;
            T* p01 = p00 + c;
            T* p10 = r1 + (2 * x) * c;
            T* p11 = p10 + c;
            for (std::int64_t j = 0; j < c; ++j) {
                T v = g[j] * T(0.25);
                p00[j] = v; p01[j] = v; p10[j] = v; p11[j] = v;
            }
        }
    });
    return grad_in;
}

// ---------------------------------------------------------------------------
// Dense layer

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
    GLCN_CHECK(input.rank() == 1 || input.rank() == 2, "dense input must be [F] or [N,F]");
    GLCN_CHECK(weights.rank() == 2, "dense weights must be [F,U]");
    const bool batched = input.rank() == 2;
    const std::int64_t n = batched ? input.shape[0] : 1;
    const std::int64_t f = input.shape.back();
    const std::int64_t u = weights.shape[1];
    GLCN_CHECK(weights.shape[0] == f, "dense shape mismatch: input features ", f, ", weights ",
               shape_str(weights.shape));
    GLCN_CHECK(bias.shape == Shape{u}, "dense bias must be [", u, "]");
    Tensor<T> out(batched ? Shape{n, u} : Shape{u});
    const T* in = input.data.data();
    const T* wp = weights.data.data();
    const T* bp = bias.data.data();
    T* op = out.data.data();
    parallel_for(n, [&](std::int64_t i) {
        const T* irow = in + i * f;
        T* orow = op + i * u;
        for (std::int64_t j = 0; j < u; ++j) orow[j] = bp[j];
        for (std::int64_t a = 0; a < f; ++a) {
            const T v = irow[a];
            const T* wrow = wp + a * u;
            for (std::int64_t j = 0; j < u; ++j) orow[j] += v * wrow[j];
        }
    });
    return out;
}

template <typename T>
void dense_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out,
                    Tensor<T>& grad_in, Tensor<T>& grad_w, Tensor<T>& grad_b) {
    const bool batched = input.rank() == 2;
    const std::int64_t n = batched ? input.shape[0] : 1;
    const std::int64_t f = input.shape.back();
    const std::int64_t u = weights.shape[1];
    grad_in = Tensor<T>(input.shape);
    grad_w = Tensor<T>(weights.shape);
    grad_b = Tensor<T>(Shape{u});

    // W transposed once so grad_in's inner loop is contiguous.
    std::vector<T> wt(static_cast<std::size_t>(f * u));
    for (std::int64_t a = 0; a < f; ++a)
        for (std::int64_t j = 0; j < u; ++j) wt[std::size_t(j * f + a)] = weights.data[std::size_t(a * u + j)];

    const T* in = input.data.data();
    const T* gp = grad_out.data.data();
    T* gi = grad_in.data.data();
    parallel_for(n, [&](std::int64_t i) {
        const T* grow = gp + i * u;
        T* irow = gi + i * f;
        for (std::int64_t j = 0; j < u; ++j) {
            const T v = grow[j];
            const T* wrow = wt.data() + j * f;
            for (std::int64_t a = 0; a < f; ++a) irow[a] += v * wrow[a];
        }
    });
    T* gw = grad_w.data.data();
    T* gb = grad_b.data.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const T* irow = in + i * f;
        const T* grow = gp + i * u;
        for (std::int64_t a = 0; a < f; ++a) {
            const T v = irow[a];
            T* wrow = gw + a * u;
            for (std::int64_t j = 0; j < u; ++j) wrow[j] += v * grow[j];
        }
        for (std::int64_t j = 0; j < u; ++j) gb[j] += grow[j];
    }
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape);
    const T* in = input.data.data();
    T* op = out.data.data();
    const std::int64_t n = input.numel();
    parallel_ranges(n, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) op[i] = in[i] > T(0) ? in[i] : T(0);
    });
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    Tensor<T> grad_in(input.shape);
    const T* in = input.data.data();
    const T* gp = grad_out.data.data();
    T* gi = grad_in.data.data();
    const std::int64_t n = input.numel();
    parallel_ranges(n, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) gi[i] = in[i] > T(0) ? gp[i] : T(0);
    });
    return grad_in;
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape);
    const T* in = input.data.data();
    T* op = out.data.data();
    const std::int64_t n = input.numel();
    parallel_ranges(n, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) {
            const T x = in[i];
            op[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
        }
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
    Tensor<T> grad_in(output.shape);
    const T* op = output.data.data();
    const T* gp = grad_out.data.data();
    T* gi = grad_in.data.data();
    const std::int64_t n = output.numel();
    parallel_ranges(n, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) gi[i] = gp[i] * op[i] * (T(1) - op[i]);
    });
    return grad_in;
}

// ---------------------------------------------------------------------------
// Softmax and losses

// Row-wise softmax with max subtraction. Output rows sum to one and every
// entry is strictly positive.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    GLCN_CHECK(logits.rank() == 2, "softmax expects [N,K] logits");
    const std::int64_t n = logits.shape[0], k = logits.shape[1];
    Tensor<T> out(logits.shape);
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = logits.data.data() + i * k;
        T* orow = out.data.data() + i * k;
        T mx = row[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (std::int64_t j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::int64_t j = 0; j < k; ++j) orow[j] /= sum;
    }
    return out;
}

// loss = (1/N) sum_n class_weights[label_n] * (-log softmax(logits_n)[label_n])
template <typename T>
T weighted_cross_entropy_forward(const Tensor<T>& logits, const std::vector<int>& labels,
                                 const std::vector<T>& class_weights, Tensor<T>* saved_softmax = nullptr) {
    GLCN_CHECK(logits.rank() == 2, "weighted_cross_entropy expects [N,K] logits");
    const std::int64_t n = logits.shape[0], k = logits.shape[1];
    GLCN_CHECK(std::int64_t(labels.size()) == n, "labels length must equal batch size");
    GLCN_CHECK(std::int64_t(class_weights.size()) == k, "class_weights length must equal class count");
    for (T w : class_weights) GLCN_CHECK(w > 0, "class weights must be positive");
    for (int y : labels)
        GLCN_CHECK(y >= 0 && y < int(k), "label ", y, " outside valid range [0, ", k - 1, "]");
    Tensor<T> sm = softmax_rows(logits);
    T loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        T p = sm.data[std::size_t(i * k + labels[std::size_t(i)])];
        loss += class_weights[std::size_t(labels[std::size_t(i)])] * (-std::log(p));
    }
    loss /= T(n);
    if (saved_softmax) *saved_softmax = std::move(sm);
    return loss;
}

template <typename T>
Tensor<T> weighted_cross_entropy_backward(const Tensor<T>& saved_softmax, const std::vector<int>& labels,
                                          const std::vector<T>& class_weights, T grad_loss) {
    const std::int64_t n = saved_softmax.shape[0], k = saved_softmax.shape[1];
    Tensor<T> grad(saved_softmax.shape);
    const T scale = grad_loss / T(n);
    for (std::int64_t i = 0; i < n; ++i) {
        const T w = class_weights[std::size_t(labels[std::size_t(i)])];
        const T* sm = saved_softmax.data.data() + i * k;
        T* g = grad.data.data() + i * k;
        for (std::int64_t j = 0; j < k; ++j) {
            T delta = (j == labels[std::size_t(i)]) ? T(1) : T(0);
            g[j] = scale * w * (sm[j] - delta);
        }
    }
    return grad;
}

// Mean of the k largest entries per row. Ties break toward the lower index,
// so the selection is deterministic.
template <typename T>
Tensor<T> topk_mean_forward(const Tensor<T>& input, std::int64_t k,
                            std::vector<std::vector<std::int64_t>>* saved_indices = nullptr) {
    GLCN_CHECK(input.rank() == 2, "topk_mean expects [N,R]");
    const std::int64_t n = input.shape[0], r = input.shape[1];
    GLCN_CHECK(k >= 1 && k <= r, "topk k=", k, " outside [1, ", r, "]");
    Tensor<T> out(Shape{n});
    if (saved_indices) saved_indices->assign(std::size_t(n), {});
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = input.data.data() + i * r;
        std::vector<std::int64_t> idx(static_cast<std::size_t>(r));
        for (std::int64_t j = 0; j < r; ++j) idx[std::size_t(j)] = j;
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](std::int64_t a, std::int64_t b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        T sum = 0;
        for (std::int64_t j = 0; j < k; ++j) sum += row[idx[std::size_t(j)]];
        out.data[std::size_t(i)] = sum / T(k);
        if (saved_indices) (*saved_indices)[std::size_t(i)].assign(idx.begin(), idx.begin() + k);
    }
    return out;
}

template <typename T>
Tensor<T> topk_mean_backward(const Shape& in_shape, const std::vector<std::vector<std::int64_t>>& indices,
                             const Tensor<T>& grad_out) {
    Tensor<T> grad(in_shape);
    const std::int64_t r = in_shape[1];
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const T g = grad_out.data[i] / T(indices[i].size());
        for (std::int64_t j : indices[i]) grad.data[std::size_t(std::int64_t(i) * r + j)] += g;
    }
    return grad;
}

// Binary cross-entropy on probabilities already in (0,1); inputs are clamped
// away from the endpoints because float sigmoids can saturate exactly.
template <typename T>
T bce_mean_forward(const Tensor<T>& probs, const std::vector<T>& targets, Tensor<T>* saved_clamped = nullptr) {
    GLCN_CHECK(probs.rank() == 1, "bce_mean expects [N] probabilities");
    const std::int64_t n = probs.shape[0];
    GLCN_CHECK(std::int64_t(targets.size()) == n, "bce targets length mismatch");
    const T lo = T(1e-7), hi = T(1) - T(1e-7);
    Tensor<T> pc(probs.shape);
    T loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        T p = std::min(hi, std::max(lo, probs.data[std::size_t(i)]));
        pc.data[std::size_t(i)] = p;
        const T y = targets[std::size_t(i)];
        loss += -(y * std::log(p) + (T(1) - y) * std::log(T(1) - p));
    }
    loss /= T(n);
    if (saved_clamped) *saved_clamped = std::move(pc);
    return loss;
}

template <typename T>
Tensor<T> bce_mean_backward(const Tensor<T>& probs, const Tensor<T>& clamped, const std::vector<T>& targets,
                            T grad_loss) {
    const std::int64_t n = probs.shape[0];
    Tensor<T> grad(probs.shape);
    const T lo = T(1e-7), hi = T(1) - T(1e-7);
    for (std::int64_t i = 0; i < n; ++i) {
        const T raw = probs.data[std::size_t(i)];
        if (raw < lo || raw > hi) continue; // clamped flat region
        const T p = clamped.data[std::size_t(i)];
        const T y = targets[std::size_t(i)];
        grad.data[std::size_t(i)] = grad_loss * (p - y) / (p * (T(1) - p) * T(n));
    }
    return grad;
}

} // namespace glcn
