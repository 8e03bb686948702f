#pragma once

// Dense row-major tensor, channel-last layout throughout ([N,H,W,C] for
// batched feature maps, [H,W,C] for single samples). 64-bit scalars are the
// default for correctness tests; training instantiates float.

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "glcn/common.hpp"

namespace glcn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        GLCN_CHECK(d > 0, "non-positive dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad; // empty until backward populates it

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(std::size_t(shape_numel(shape)), T(0)) {}

    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        GLCN_CHECK(std::int64_t(data.size()) == shape_numel(shape), "data length ", data.size(),
                   " does not match shape ", shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, T value) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    std::int64_t numel() const { return std::int64_t(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }
};

} // namespace glcn
