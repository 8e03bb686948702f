#pragma once

// Shared test utilities: random tensors and a central-finite-difference
// gradient checker. The checker re-runs the graph builder from scratch for
// every probe, so it stays independent of the backward implementation.

#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "glcn/rng.hpp"
#include "glcn/tape.hpp"
#include "glcn/tensor.hpp"

namespace glcn_test {

template <typename T>
glcn::Tensor<T> rand_tensor(glcn::Shape shape, glcn::Rng& rng, double lo = -1.0, double hi = 1.0) {
    glcn::Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = T(rng.uniform(lo, hi));
    return t;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Builder receives the tape plus leaf ids (one per tensor in `leaves`, same
// order) and returns the scalar loss id.
using GraphBuilder =
    std::function<glcn::Tape<double>::Id(glcn::Tape<double>&, const std::vector<glcn::Tape<double>::Id>&)>;

inline GradCheckResult finite_difference_check(std::vector<glcn::Tensor<double>> leaves,
                                               const GraphBuilder& build, double h = 1e-5) {
    auto run_forward = [&](const std::vector<glcn::Tensor<double>>& values) {
        glcn::Tape<double> tape;
        std::vector<glcn::Tape<double>::Id> ids;
        ids.reserve(values.size());
        for (const auto& v : values) ids.push_back(tape.leaf(v, true));
        auto loss = build(tape, ids);
        return tape.value(loss).data[0];
    };

    // Analytic gradients.
    glcn::Tape<double> tape;
    std::vector<glcn::Tape<double>::Id> ids;
    for (const auto& v : leaves) ids.push_back(tape.leaf(v, true));
    auto loss = build(tape, ids);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto id : ids) analytic.push_back(tape.grad(id));

    GradCheckResult result;
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
            result.max_rel_error = std::max(result.max_rel_error, rel);
            ++result.checked;
        }
    }
    return result;
}

} // namespace glcn_test
