#pragma once

// Reverse-mode autodiff over a linear tape. Nodes are appended in execution
// order, which is a topological order by construction; backward() walks the
// tape once in reverse and accumulates gradients into parent nodes.

#include <functional>
#include <utility>
#include <vector>

#include "glcn/kernels.hpp"
#include "glcn/tensor.hpp"

namespace glcn {

template <typename T>
class Tape {
public:
    using Id = int;

    Id input(Tensor<T> t) { return push(std::move(t), false); }

    Id leaf(Tensor<T> t, bool requires_grad = true) { return push(std::move(t), requires_grad); }

    const Tensor<T>& value(Id id) const { return nodes_[std::size_t(id)].value; }
    Tensor<T>& value(Id id) { return nodes_[std::size_t(id)].value; }

    const std::vector<T>& grad(Id id) const {
        GLCN_CHECK(!nodes_[std::size_t(id)].value.grad.empty(), "grad not populated; run backward() first");
        return nodes_[std::size_t(id)].value.grad;
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t backward_visits() const { return backward_visits_; }

    // ---- operations ------------------------------------------------------

    Id conv2d(Id x, Id kernels, Id bias, Padding padding, std::int64_t stride = 1) {
        ConvGeometry g = conv_geometry(value(x).shape, value(kernels).shape, padding, stride);
        Tensor<T> out = conv2d_forward(value(x), value(kernels), value(bias), padding, stride);
        Id id = push(std::move(out), false, {x, kernels, bias});
        nodes_[std::size_t(id)].backprop = [this, id, x, kernels, bias, g](void) {
            const Tensor<T>& go = nodes_[std::size_t(id)].value; // grad lives in .grad
            Tensor<T> gshell(go.shape, std::vector<T>(go.grad));
            if (needs_grad(x)) {
                Tensor<T> gin = conv2d_backward_input(gshell, value(kernels), g);
                accumulate(x, gin.data);
            }
            if (needs_grad(kernels) || needs_grad(bias)) {
                Tensor<T> gk, gb;
                conv2d_backward_params(value(x), gshell, g, gk, gb);
                accumulate(kernels, gk.data);
                accumulate(bias, gb.data);
            }
        };
        return id;
    }

    Id batch_norm(Id x, Id gamma, Id beta, BnState<T>* state, BnMode mode, T epsilon = T(1e-5),
                  T momentum = T(0.1)) {
        auto saved = std::make_shared<BnSaved<T>>();
        Tensor<T> out = batch_norm_forward(value(x), value(gamma), value(beta), *state, mode, epsilon,
                                           momentum, saved.get());
        Id id = push(std::move(out), false, {x, gamma, beta});
        nodes_[std::size_t(id)].backprop = [this, id, x, gamma, beta, saved](void) {
            Tensor<T> gshell(nodes_[std::size_t(id)].value.shape, std::vector<T>(nodes_[std::size_t(id)].value.grad));
            Tensor<T> gin, ggamma, gbeta;
            batch_norm_backward(gshell, value(gamma), *saved, gin, ggamma, gbeta);
            if (needs_grad(x)) accumulate(x, gin.data);
            accumulate(gamma, ggamma.data);
            accumulate(beta, gbeta.data);
        };
        return id;
    }

    Id relu(Id x) {
        Id id = push(relu_forward(value(x)), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x](void) {
            Tensor<T> gshell(nodes_[std::size_t(id)].value.shape, std::vector<T>(nodes_[std::size_t(id)].value.grad));
            Tensor<T> gin = relu_backward(value(x), gshell);
            accumulate(x, gin.data);
        };
        return id;
    }

    Id sigmoid(Id x) {
        Id id = push(sigmoid_forward(value(x)), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x](void) {
            Tensor<T> gshell(nodes_[std::size_t(id)].value.shape, std::vector<T>(nodes_[std::size_t(id)].value.grad));
            Tensor<T> gin = sigmoid_backward(nodes_[std::size_t(id)].value, gshell);
            accumulate(x, gin.data);
        };
        return id;
    }

    Id avg_pool2(Id x) {
        Shape in_shape = value(x).shape;
        Id id = push(avg_pool2_forward(value(x)), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x, in_shape](void) {
            Tensor<T> gshell(nodes_[std::size_t(id)].value.shape, std::vector<T>(nodes_[std::size_t(id)].value.grad));
            Tensor<T> gin = avg_pool2_backward(gshell, in_shape);
            accumulate(x, gin.data);
        };
        return id;
    }

    Id global_avg_pool(Id x) {
        Shape in_shape = value(x).shape;
        Id id = push(global_avg_pool_forward(value(x)), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x, in_shape](void) {
            Tensor<T> gshell(nodes_[std::size_t(id)].value.shape, std::vector<T>(nodes_[std::size_t(id)].value.grad));
            Tensor<T> gin = global_avg_pool_backward(gshell, in_shape);
            accumulate(x, gin.data);
        };
        return id;
    }

    Id dense(Id x, Id weights, Id bias) {
        Id id = push(dense_forward(value(x), value(weights), value(bias)), false, {x, weights, bias});
        nodes_[std::size_t(id)].backprop = [this, id, x, weights, bias](void) {
            Tensor<T> gshell(nodes_[std::size_t(id)].value.shape, std::vector<T>(nodes_[std::size_t(id)].value.grad));
            Tensor<T> gin, gw, gb;
            dense_backward(value(x), value(weights), gshell, gin, gw, gb);
            if (needs_grad(x)) accumulate(x, gin.data);
            accumulate(weights, gw.data);
            accumulate(bias, gb.data);
        };
        return id;
    }

    Id reshape(Id x, Shape new_shape) {
        GLCN_CHECK(shape_numel(new_shape) == value(x).numel(), "reshape numel mismatch: ",
                   shape_str(value(x).shape), " -> ", shape_str(new_shape));
        Tensor<T> t(new_shape, std::vector<T>(value(x).data));
        Id id = push(std::move(t), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x](void) {
            accumulate(x, nodes_[std::size_t(id)].value.grad);
        };
        return id;
    }

    Id add(Id a, Id b) {
        GLCN_CHECK(value(a).shape == value(b).shape, "add shape mismatch");
        Tensor<T> out(value(a).shape);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = value(a).data[i] + value(b).data[i];
        Id id = push(std::move(out), false, {a, b});
        nodes_[std::size_t(id)].backprop = [this, id, a, b](void) {
            accumulate(a, nodes_[std::size_t(id)].value.grad);
            accumulate(b, nodes_[std::size_t(id)].value.grad);
        };
        return id;
    }

    Id mul(Id a, Id b) {
        GLCN_CHECK(value(a).shape == value(b).shape, "mul shape mismatch");
        Tensor<T> out(value(a).shape);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = value(a).data[i] * value(b).data[i];
        Id id = push(std::move(out), false, {a, b});
        nodes_[std::size_t(id)].backprop = [this, id, a, b](void) {
            const auto& g = nodes_[std::size_t(id)].value.grad;
            std::vector<T> ga(g.size()), gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] = g[i] * value(b).data[i];
                gb[i] = g[i] * value(a).data[i];
            }
            accumulate(a, ga);
            accumulate(b, gb);
        };
        return id;
    }

    Id scale(Id x, T c) {
        Tensor<T> out(value(x).shape);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = value(x).data[i] * c;
        Id id = push(std::move(out), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x, c](void) {
            const auto& g = nodes_[std::size_t(id)].value.grad;
            std::vector<T> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * c;
            accumulate(x, gx);
        };
        return id;
    }

    Id sum(Id x) {
        T total = 0;
        for (T v : value(x).data) total += v;
        Id id = push(Tensor<T>::scalar(total), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x](void) {
            const T g = nodes_[std::size_t(id)].value.grad[0];
            std::vector<T> gx(value(x).data.size(), g);
            accumulate(x, gx);
        };
        return id;
    }

    // Picks one channel from the last dimension: [...,C] -> [...].
    Id slice_last(Id x, std::int64_t channel) {
        const Tensor<T>& v = value(x);
        const std::int64_t c = v.shape.back();
        GLCN_CHECK(channel >= 0 && channel < c, "slice_last channel out of range");
        Shape out_shape(v.shape.begin(), v.shape.end() - 1);
        Tensor<T> out(out_shape);
        const std::int64_t rows = out.numel();
        for (std::int64_t i = 0; i < rows; ++i) out.data[std::size_t(i)] = v.data[std::size_t(i * c + channel)];
        Id id = push(std::move(out), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x, c, channel](void) {
            const auto& g = nodes_[std::size_t(id)].value.grad;
            std::vector<T> gx(value(x).data.size(), T(0));
            for (std::size_t i = 0; i < g.size(); ++i) gx[std::size_t(std::int64_t(i) * c + channel)] = g[i];
            accumulate(x, gx);
        };
        return id;
    }

    Id topk_mean(Id x, std::int64_t k) {
        auto indices = std::make_shared<std::vector<std::vector<std::int64_t>>>();
        Tensor<T> out = topk_mean_forward(value(x), k, indices.get());
        Shape in_shape = value(x).shape;
        Id id = push(std::move(out), false, {x});
        nodes_[std::size_t(id)].backprop = [this, id, x, indices, in_shape](void) {
            Tensor<T> gshell(nodes_[std::size_t(id)].value.shape, std::vector<T>(nodes_[std::size_t(id)].value.grad));
            Tensor<T> gin = topk_mean_backward<T>(in_shape, *indices, gshell);
            accumulate(x, gin.data);
        };
        return id;
    }

    Id weighted_cross_entropy(Id logits, std::vector<int> labels, std::vector<T> class_weights) {
        auto saved = std::make_shared<Tensor<T>>();
        T loss = weighted_cross_entropy_forward(value(logits), labels, class_weights, saved.get());
        Id id = push(Tensor<T>::scalar(loss), false, {logits});
        nodes_[std::size_t(id)].backprop = [this, id, logits, saved, labels = std::move(labels),
                                            class_weights = std::move(class_weights)](void) {
            const T g = nodes_[std::size_t(id)].value.grad[0];
            Tensor<T> gin = weighted_cross_entropy_backward(*saved, labels, class_weights, g);
            accumulate(logits, gin.data);
        };
        return id;
    }

    Id bce_mean(Id probs, std::vector<T> targets) {
        auto clamped = std::make_shared<Tensor<T>>();
        T loss = bce_mean_forward(value(probs), targets, clamped.get());
        Id id = push(Tensor<T>::scalar(loss), false, {probs});
        nodes_[std::size_t(id)].backprop = [this, id, probs, clamped, targets = std::move(targets)](void) {
            const T g = nodes_[std::size_t(id)].value.grad[0];
            Tensor<T> gin = bce_mean_backward(value(probs), *clamped, targets, g);
            accumulate(probs, gin.data);
        };
        return id;
    }

    // ---- backward --------------------------------------------------------

    void backward(Id loss) {
        GLCN_CHECK(value(loss).numel() == 1, "backward requires a scalar loss, got shape ",
                   shape_str(value(loss).shape));
        for (Id i = 0; i <= loss; ++i) nodes_[std::size_t(i)].value.ensure_grad();
        nodes_[std::size_t(loss)].value.grad[0] = T(1);
        backward_visits_ = 0;
        for (Id i = loss; i >= 0; --i) {
            ++backward_visits_;
            if (nodes_[std::size_t(i)].backprop) nodes_[std::size_t(i)].backprop();
        }
    }

private:
    struct Node {
        Tensor<T> value;
        std::function<void()> backprop;
        std::vector<Id> parents;
        bool needs_grad = false;
    };

public:
    // True when some requires_grad leaf feeds this node, i.e. its gradient
    // is worth computing during backward.
    bool needs_grad(Id id) const { return nodes_[std::size_t(id)].needs_grad; }

private:

    Id push(Tensor<T> t, bool requires_grad, std::vector<Id> parents = {}) {
        bool needs = requires_grad;
        for (Id p : parents) {
            GLCN_CHECK(p >= 0 && p < Id(nodes_.size()), "parent node out of order"); // topological invariant
            needs = needs || nodes_[std::size_t(p)].needs_grad;
        }
        Node node;
        node.value = std::move(t);
        node.value.requires_grad = requires_grad;
        node.needs_grad = needs;
        node.parents = std::move(parents);
        nodes_.push_back(std::move(node));
        return Id(nodes_.size()) - 1;
    }

    void accumulate(Id id, const std::vector<T>& g) {
        auto& grad = nodes_[std::size_t(id)].value.grad;
        GLCN_CHECK(grad.size() == g.size(), "gradient size mismatch during accumulation");
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }

    std::vector<Node> nodes_;
    std::size_t backward_visits_ = 0;
};

} // namespace glcn
