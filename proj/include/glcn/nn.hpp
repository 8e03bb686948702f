#pragma once

// Parameter containers, He initialization and the Adam optimizer.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "glcn/rng.hpp"
#include "glcn/tensor.hpp"

namespace glcn {

// Zero-mean Gaussian with variance 2/fan_in.
template <typename T>
Tensor<T> he_init(Shape shape, std::int64_t fan_in, Rng& rng) {
    GLCN_CHECK(fan_in > 0, "he_init fan_in must be positive");
    Tensor<T> t(std::move(shape));
    const double stddev = std::sqrt(2.0 / double(fan_in));
    for (auto& v : t.data) v = T(rng.normal(0.0, stddev));
    return t;
}

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
};

// Standard bias-corrected Adam. Moments are keyed by parameter name; the
// step count is shared across the group, as in the published update rule.
template <typename T>
class Adam {
public:
    Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    std::int64_t step_count() const { return step_; }

    // Reads gradients from each param's tensor.grad; rejects non-finite
    // gradients before touching any state, so a failed step has no effect.
    void step(const std::vector<Param<T>*>& params, T lr) {
        GLCN_CHECK(lr > 0, "adam learning rate must be positive");
        for (const Param<T>* p : params) {
            GLCN_CHECK(p->value.grad.size() == p->value.data.size(), "missing gradient for parameter ",
                       p->name);
            for (T g : p->value.grad)
                if (!std::isfinite(double(g)))
                    fail("adam step rejected: non-finite gradient in parameter '", p->name, "'");
        }
        step_ += 1;
        const T bc1 = T(1) - std::pow(beta1_, T(step_));
        const T bc2 = T(1) - std::pow(beta2_, T(step_));
        for (Param<T>* p : params) {
            auto& m = moments_[p->name];
            if (m.first.size() != p->value.data.size()) {
                m.first.assign(p->value.data.size(), T(0));
                m.second.assign(p->value.data.size(), T(0));
            }
            for (std::size_t i = 0; i < p->value.data.size(); ++i) {
                const T g = p->value.grad[i];
                m.first[i] = beta1_ * m.first[i] + (T(1) - beta1_) * g;
                m.second[i] = beta2_ * m.second[i] + (T(1) - beta2_) * g * g;
                const T m_hat = m.first[i] / bc1;
                const T v_hat = m.second[i] / bc2;
                p->value.data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
            }
        }
    }

    void reset() {
        moments_.clear();
        step_ = 0;
    }

private:
    T beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
    std::unordered_map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments_;
};

} // namespace glcn
