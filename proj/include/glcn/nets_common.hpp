#pragma once

// Shared building blocks for the three networks: parameter registration,
// conv blocks, and checkpoint plumbing. Parameter names are deliberately
// uniform across models (conv1.weight, bn1.gamma, fc_out.weight, ...) so a
// checkpoint loaded into the wrong architecture fails with a shape
// mismatch that names the offending tensor.

#include <memory>
#include <string>
#include <vector>

#include "glcn/checkpoint.hpp"
#include "glcn/nn.hpp"
#include "glcn/tape.hpp"

namespace glcn {

inline const std::vector<std::string> kPatchClassOrder = {"malignant", "benign", "outside", "negative"};

template <typename T>
struct ModelParams {
    std::vector<std::unique_ptr<Param<T>>> owned;
    std::vector<std::pair<std::string, BnState<T>*>> bn_states;

    Param<T>* add(const std::string& name, Tensor<T> value) {
        owned.push_back(std::make_unique<Param<T>>(Param<T>{name, std::move(value)}));
        return owned.back().get();
    }

    Param<T>* find(const std::string& name) const {
        for (const auto& p : owned)
            if (p->name == name) return p.get();
        return nullptr;
    }

    std::vector<Param<T>*> all() const {
        std::vector<Param<T>*> out;
        for (const auto& p : owned) out.push_back(p.get());
        return out;
    }
};

// conv -> batchnorm -> relu, the block used by f_loc and the context net.
template <typename T>
struct ConvBnBlock {
    Param<T>* kernels = nullptr;
    Param<T>* bias = nullptr;
    Param<T>* gamma = nullptr;
    Param<T>* beta = nullptr;
    BnState<T> bn;

    void init(ModelParams<T>& params, const std::string& prefix, std::int64_t k, std::int64_t cin,
              std::int64_t cout, Rng& rng) {
        kernels = params.add(prefix + ".weight", he_init<T>({k, k, cin, cout}, k * k * cin, rng));
        bias = params.add(prefix + ".bias", Tensor<T>({cout}));
        const std::string bn_name = "bn_" + prefix;
        gamma = params.add(bn_name + ".gamma", Tensor<T>::full({cout}, T(1)));
        beta = params.add(bn_name + ".beta", Tensor<T>({cout}));
        bn.init(cout);
        bn.ready = true;
        params.bn_states.emplace_back(bn_name, &bn);
    }

    typename Tape<T>::Id forward(Tape<T>& tape, typename Tape<T>::Id x,
                                 std::unordered_map<std::string, typename Tape<T>::Id>& bound,
                                 BnMode mode, std::int64_t stride = 1) {
        auto conv = tape.conv2d(x, bound.at(kernels->name), bound.at(bias->name), Padding::Same, stride);
        auto norm = tape.batch_norm(conv, bound.at(gamma->name), bound.at(beta->name), &bn, mode);
        return tape.relu(norm);
    }
};

// Binds every parameter as a tape leaf; the returned map is what forward
// passes read ids from, and grads are copied back through it.
template <typename T>
std::unordered_map<std::string, typename Tape<T>::Id> bind_params(Tape<T>& tape,
                                                                  const ModelParams<T>& params) {
    std::unordered_map<std::string, typename Tape<T>::Id> bound;
    for (const auto& p : params.owned) bound[p->name] = tape.leaf(p->value, true);
    return bound;
}

template <typename T>
void collect_grads(Tape<T>& tape, const ModelParams<T>& params,
                   const std::unordered_map<std::string, typename Tape<T>::Id>& bound) {
    for (const auto& p : params.owned) p->value.grad = tape.grad(bound.at(p->name));
}

// Checkpoint helpers (float models only; checkpoints store raw f32).
inline void put_model_tensors(Checkpoint& ckpt, const ModelParams<float>& params) {
    for (const auto& p : params.owned) ckpt.tensors.emplace_back(p->name, p->value);
    nlohmann::json bn_updates = nlohmann::json::object();
    for (const auto& [name, state] : params.bn_states) {
        ckpt.tensors.emplace_back(name + ".running_mean",
                                  Tensor<float>({std::int64_t(state->running_mean.size())},
                                                std::vector<float>(state->running_mean)));
        ckpt.tensors.emplace_back(name + ".running_var",
                                  Tensor<float>({std::int64_t(state->running_var.size())},
                                                std::vector<float>(state->running_var)));
        bn_updates[name] = state->updates;
    }
    ckpt.metadata["bn_updates"] = bn_updates;
}

inline void read_model_tensors(const Checkpoint& ckpt, ModelParams<float>& params) {
    for (const auto& p : params.owned) p->value = ckpt.expect(p->name, p->value.shape);
    for (auto& [name, state] : params.bn_states) {
        const std::int64_t c = std::int64_t(state->running_mean.size());
        state->running_mean = ckpt.expect(name + ".running_mean", {c}).data;
        state->running_var = ckpt.expect(name + ".running_var", {c}).data;
        state->ready = true;
        if (ckpt.metadata.contains("bn_updates") && ckpt.metadata["bn_updates"].contains(name))
            state->updates = ckpt.metadata["bn_updates"][name].get<std::int64_t>();
    }
}

} // namespace glcn
