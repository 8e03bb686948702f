#pragma once

// Central-finite-difference gradient verification for single layers and for
// the full network graphs at toy shapes. Used by the `gradcheck` CLI
// subcommand and by the acceptance suite; double precision throughout.

#include <functional>
#include <string>
#include <vector>

#include "glcn/agg_net.hpp"
#include "glcn/context_net.hpp"
#include "glcn/local_net.hpp"

namespace glcn {

struct GradCheckOutcome {
    std::string name;
    double max_rel_error = 0;
    std::size_t checked = 0;
};

using GradGraphBuilder =
    std::function<Tape<double>::Id(Tape<double>&, const std::vector<Tape<double>::Id>&)>;

// Analytic gradients from one backward pass vs central differences with a
// fresh forward per probe; relative error floors at 1e-4 so near-zero
// gradients are compared absolutely at 1e-8.
inline GradCheckOutcome finite_difference_check(std::string name, std::vector<Tensor<double>> leaves,
                                                const GradGraphBuilder& build, double h = 1e-5) {
    auto run_forward = [&](const std::vector<Tensor<double>>& values) {
        Tape<double> tape;
        std::vector<Tape<double>::Id> ids;
        ids.reserve(values.size());
        for (const auto& v : values) ids.push_back(tape.leaf(v, true));
        return tape.value(build(tape, ids)).data[0];
    };

    Tape<double> tape;
    std::vector<Tape<double>::Id> ids;
    for (const auto& v : leaves) ids.push_back(tape.leaf(v, true));
    auto loss = build(tape, ids);
    GLCN_CHECK(tape.value(loss).numel() == 1, "gradcheck loss must be scalar");
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto id : ids) analytic.push_back(tape.grad(id));

    GradCheckOutcome out;
    out.name = std::move(name);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        for (std::size_t i = 0; i < leaves[li].data.size(); ++i) {
            const double saved = leaves[li].data[i];
            leaves[li].data[i] = saved + h;
            const double up = run_forward(leaves);
            leaves[li].data[i] = saved - h;
            const double down = run_forward(leaves);
            leaves[li].data[i] = saved;
            const double fd = (up - down) / (2 * h);
            const double a = analytic[li][i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4});
            out.max_rel_error = std::max(out.max_rel_error, rel);
            ++out.checked;
        }
    }
    return out;
}

namespace gradcheck_detail {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = T(rng.uniform(lo, hi));
    return t;
}

// Packs a model's parameters as leaves and rebinds them inside the builder,
// so the finite differences probe the actual parameter tensors.
template <typename Net>
struct NetProbe {
    Net* net;
    std::vector<std::string> names;

    std::vector<Tensor<double>> leaves() const {
        std::vector<Tensor<double>> out;
        for (const auto& p : net->params().owned) out.push_back(p->value);
        return out;
    }

    std::unordered_map<std::string, Tape<double>::Id> bind(Tape<double>& tape,
                                                           const std::vector<Tape<double>::Id>& ids,
                                                           std::size_t offset) const {
        std::unordered_map<std::string, Tape<double>::Id> bound;
        for (std::size_t i = 0; i < net->params().owned.size(); ++i)
            bound[net->params().owned[i]->name] = ids[offset + i];
        return bound;
    }
};

} // namespace gradcheck_detail

// Full-network gradient checks at toy shapes. Runtime is a few seconds.
inline std::vector<GradCheckOutcome> gradcheck_networks() {
    using namespace gradcheck_detail;
    std::vector<GradCheckOutcome> results;
    Rng rng(20240817);

    // f_loc at toy scale: 8x8 patches, two blocks, full bottleneck + head.
    {
        LocalNetConfig cfg;
        cfg.widths = {4, 6};
        cfg.resolution = 8;
        LocalNet<double> net(cfg, 7);
        NetProbe<LocalNet<double>> probe{&net, {}};
        auto leaves = probe.leaves();
        leaves.push_back(uniform_tensor<double>({3, 8, 8, 1}, rng, 0.0, 1.0));
        const std::size_t n_params = net.params().owned.size();
        std::vector<int> labels = {0, 2, 3};
        std::vector<double> weights = {500.0, 285.714285714285714, 2.0, 2.022244691607685};
        results.push_back(finite_difference_check(
            "f_loc toy graph", std::move(leaves),
            [&, n_params](Tape<double>& tape, const std::vector<Tape<double>::Id>& ids) {
                auto bound = probe.bind(tape, ids, 0);
                auto fwd = net.forward(tape, ids[n_params], bound, BnMode::Train);
                return tape.weighted_cross_entropy(fwd.logits, labels, weights);
            }));
    }

    // Context net at toy scale: 12x8 image, stride 4 backbone, pooled BCE heads.
    {
        ContextNetConfig cfg;
        cfg.widths = {3, 5};
        cfg.grid_factor = 4;
        cfg.pool_fraction = 0.3;
        ContextNet<double> net(cfg, 9);
        NetProbe<ContextNet<double>> probe{&net, {}};
        auto leaves = probe.leaves();
        leaves.push_back(uniform_tensor<double>({2, 12, 8, 1}, rng, 0.0, 1.0));
        const std::size_t n_params = net.params().owned.size();
        std::vector<double> has_mal = {1.0, 0.0}, has_ben = {0.0, 1.0};
        results.push_back(finite_difference_check(
            "context-net toy graph", std::move(leaves),
            [&, n_params](Tape<double>& tape, const std::vector<Tape<double>::Id>& ids) {
                auto bound = probe.bind(tape, ids, 0);
                auto sal = net.forward_saliency(tape, ids[n_params], bound, BnMode::Train);
                auto [pm, pb] = net.forward_scores(tape, sal);
                return tape.add(tape.bce_mean(pm, has_mal), tape.bce_mean(pb, has_ben));
            }));
    }

    // f_agg at toy grid with the full channel stack (M = 35).
    {
        AggNetConfig cfg;
        cfg.input_channels = 35;
        AggNet<double> net(cfg, 11);
        NetProbe<AggNet<double>> probe{&net, {}};
        auto leaves = probe.leaves();
        leaves.push_back(uniform_tensor<double>({2, 4, 3, 35}, rng, -1.0, 1.0));
        const std::size_t n_params = net.params().owned.size();
        std::vector<int> labels = {1, 2};
        std::vector<double> weights = {4.0, 4.0, 4.0, 4.0};
        results.push_back(finite_difference_check(
            "f_agg toy graph", std::move(leaves),
            [&, n_params](Tape<double>& tape, const std::vector<Tape<double>::Id>& ids) {
                auto bound = probe.bind(tape, ids, 0);
                auto logits = net.forward(tape, ids[n_params], bound, BnMode::Train);
                return tape.weighted_cross_entropy(logits, labels, weights);
            }));
    }
    return results;
}

// Per-layer checks mirroring the layer set the networks use.
inline std::vector<GradCheckOutcome> gradcheck_layers() {
    using namespace gradcheck_detail;
    std::vector<GradCheckOutcome> results;
    Rng rng(424242);

    for (auto [padding, stride, label] :
         {std::tuple{Padding::Same, std::int64_t(1), "conv2d same"},
          std::tuple{Padding::Valid, std::int64_t(1), "conv2d valid"},
          std::tuple{Padding::Same, std::int64_t(2), "conv2d stride-2"}}) {
        auto x = uniform_tensor<double>({2, 5, 4, 2}, rng, -1, 1);
        auto k = uniform_tensor<double>({3, 3, 2, 3}, rng, -1, 1);
        auto b = uniform_tensor<double>({3}, rng, -1, 1);
        ConvGeometry g = conv_geometry(x.shape, k.shape, padding, stride);
        auto probe = uniform_tensor<double>({2, g.out_h, g.out_w, 3}, rng, -1, 1);
        results.push_back(finite_difference_check(
            label, {x, k, b},
            [padding = padding, stride = stride, probe](Tape<double>& t,
                                                        const std::vector<Tape<double>::Id>& ids) {
                auto out = t.conv2d(ids[0], ids[1], ids[2], padding, stride);
                return t.sum(t.mul(out, t.input(probe)));
            }));
    }
    {
        auto x = uniform_tensor<double>({4, 3, 2, 3}, rng, -1, 1);
        auto gamma = uniform_tensor<double>({3}, rng, 0.5, 1.5);
        auto beta = uniform_tensor<double>({3}, rng, -1, 1);
        auto probe = uniform_tensor<double>({4, 3, 2, 3}, rng, -1, 1);
        results.push_back(finite_difference_check(
            "batch_norm train", {x, gamma, beta},
            [probe](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                BnState<double> state;
                auto out = t.batch_norm(ids[0], ids[1], ids[2], &state, BnMode::Train);
                return t.sum(t.mul(out, t.input(probe)));
            }));
    }
    {
        auto x = uniform_tensor<double>({2, 4, 4, 3}, rng, -1, 1);
        auto probe = uniform_tensor<double>({2, 3}, rng, -1, 1);
        results.push_back(finite_difference_check(
            "global_avg_pool", {x}, [probe](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                return t.sum(t.mul(t.global_avg_pool(ids[0]), t.input(probe)));
            }));
        auto probe2 = uniform_tensor<double>({2, 2, 2, 3}, rng, -1, 1);
        results.push_back(finite_difference_check(
            "avg_pool2", {x}, [probe2](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                return t.sum(t.mul(t.avg_pool2(ids[0]), t.input(probe2)));
            }));
    }
    {
        auto x = uniform_tensor<double>({3, 5}, rng, -1, 1);
        auto w = uniform_tensor<double>({5, 4}, rng, -1, 1);
        auto b = uniform_tensor<double>({4}, rng, -1, 1);
        auto probe = uniform_tensor<double>({3, 4}, rng, -1, 1);
        results.push_back(finite_difference_check(
            "dense", {x, w, b}, [probe](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                return t.sum(t.mul(t.dense(ids[0], ids[1], ids[2]), t.input(probe)));
            }));
    }
    {
        auto logits = uniform_tensor<double>({3, 4}, rng, -2, 2);
        results.push_back(finite_difference_check(
            "weighted_cross_entropy", {logits},
            [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                return t.weighted_cross_entropy(ids[0], {0, 2, 3}, {500, 285.714, 2, 2.022});
            }));
    }
    {
        auto x = uniform_tensor<double>({2, 9}, rng, -2, 2);
        results.push_back(finite_difference_check(
            "sigmoid->topk->bce", {x}, [](Tape<double>& t, const std::vector<Tape<double>::Id>& ids) {
                auto p = t.topk_mean(t.sigmoid(ids[0]), 3);
                return t.bce_mean(p, {1.0, 0.0});
            }));
    }
    return results;
}

} // namespace glcn
