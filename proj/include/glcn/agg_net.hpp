#pragma once

// f_agg: the aggregation network fusing local and global maps. Pipeline is
// [BN -> ReLU -> conv(32, 3x3, same)] x2 -> GAP -> dense(4); the first
// batch norm acts on the raw assembled input X, jointly normalizing the
// [0,1] map channels and the unbounded embedding channels.

#include <string>
#include <vector>

#include "glcn/maps.hpp"
#include "glcn/nets_common.hpp"

namespace glcn {

struct AggNetConfig {
    std::int64_t input_channels = 34; // M
    std::vector<std::string> channel_legend;

    static constexpr std::int64_t kFilters = 32;
    static constexpr std::int64_t kKernel = 3;
    static constexpr std::int64_t kClasses = 4;

    void validate() const {
        GLCN_CHECK(input_channels >= 1, "aggregation net needs at least one input channel");
        GLCN_CHECK(channel_legend.empty() || std::int64_t(channel_legend.size()) == input_channels,
                   "channel legend length ", channel_legend.size(), " != M=", input_channels);
    }

    nlohmann::json to_json() const {
        return {{"input_channels", input_channels}, {"channel_legend", channel_legend}};
    }
    static AggNetConfig from_json(const nlohmann::json& j) {
        AggNetConfig c;
        c.input_channels = j.value("input_channels", c.input_channels);
        if (j.contains("channel_legend"))
            c.channel_legend = j.at("channel_legend").get<std::vector<std::string>>();
        return c;
    }
};

template <typename T>
class AggNet {
public:
    using Id = typename Tape<T>::Id;

    explicit AggNet(AggNetConfig config, std::uint64_t init_seed = 1) : cfg_(std::move(config)) {
        cfg_.validate();
        Rng rng = derive_rng(init_seed, {tag("agg-net")});
        const std::int64_t m = cfg_.input_channels;
        bn1_gamma_ = params_.add("bn1.gamma", Tensor<T>::full({m}, T(1)));
        bn1_beta_ = params_.add("bn1.beta", Tensor<T>({m}));
        bn1_ = std::make_unique<BnState<T>>();
        bn1_->init(m);
        bn1_->ready = true;
        params_.bn_states.emplace_back("bn1", bn1_.get());
        conv1_w_ = params_.add("conv1.weight",
                               he_init<T>({3, 3, m, AggNetConfig::kFilters}, 9 * m, rng));
        conv1_b_ = params_.add("conv1.bias", Tensor<T>({AggNetConfig::kFilters}));
        bn2_gamma_ = params_.add("bn2.gamma", Tensor<T>::full({AggNetConfig::kFilters}, T(1)));
        bn2_beta_ = params_.add("bn2.beta", Tensor<T>({AggNetConfig::kFilters}));
        bn2_ = std::make_unique<BnState<T>>();
        bn2_->init(AggNetConfig::kFilters);
        bn2_->ready = true;
        params_.bn_states.emplace_back("bn2", bn2_.get());
        conv2_w_ = params_.add("conv2.weight",
                               he_init<T>({3, 3, AggNetConfig::kFilters, AggNetConfig::kFilters},
                                          9 * AggNetConfig::kFilters, rng));
        conv2_b_ = params_.add("conv2.bias", Tensor<T>({AggNetConfig::kFilters}));
        fc_out_w_ = params_.add("fc_out.weight",
                                he_init<T>({AggNetConfig::kFilters, 4}, AggNetConfig::kFilters, rng));
        fc_out_b_ = params_.add("fc_out.bias", Tensor<T>({4}));
    }

    const AggNetConfig& config() const { return cfg_; }
    ModelParams<T>& params() { return params_; }
    const ModelParams<T>& params() const { return params_; }

    // Input [N,gh,gw,M] -> logits [N,4].
    Id forward(Tape<T>& tape, Id x, std::unordered_map<std::string, Id>& bound, BnMode mode) {
        const Shape& s = tape.value(x).shape;
        GLCN_CHECK(s.size() == 4 && s[3] == cfg_.input_channels, "aggregation net expects M=",
                   cfg_.input_channels, " channels, got input ", shape_str(s));
        Id cur = tape.batch_norm(x, bound.at("bn1.gamma"), bound.at("bn1.beta"), bn1_.get(), mode);
        cur = tape.relu(cur);
        cur = tape.conv2d(cur, bound.at("conv1.weight"), bound.at("conv1.bias"), Padding::Same);
        cur = tape.batch_norm(cur, bound.at("bn2.gamma"), bound.at("bn2.beta"), bn2_.get(), mode);
        cur = tape.relu(cur);
        cur = tape.conv2d(cur, bound.at("conv2.weight"), bound.at("conv2.bias"), Padding::Same);
        Id pooled = tape.global_avg_pool(cur);
        return tape.dense(pooled, bound.at("fc_out.weight"), bound.at("fc_out.bias"));
    }

    // Eval logits for a batch of assembled inputs.
    Tensor<T> logits_batch(const Tensor<T>& x) {
        Tape<T> tape;
        auto bound = bind_params(tape, params_);
        Id out = forward(tape, tape.input(x), bound, BnMode::Eval);
        return tape.value(out);
    }

    std::vector<T> agg_forward(const Tensor<T>& x) {
        GLCN_CHECK(x.rank() == 3, "agg_forward expects a single [gh,gw,M] input");
        Tensor<T> batch({1, x.shape[0], x.shape[1], x.shape[2]}, std::vector<T>(x.data));
        return logits_batch(batch).data;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& p : params_.owned) n += p->value.numel();
        return n;
    }

    Checkpoint to_checkpoint(nlohmann::json extra = {}) const {
        Checkpoint ckpt;
        ckpt.metadata = std::move(extra);
        ckpt.metadata["model"] = "agg";
        ckpt.metadata["config"] = cfg_.to_json();
        ckpt.metadata["class_order"] = kPatchClassOrder;
        put_model_tensors(ckpt, params_);
        return ckpt;
    }

    static AggNet from_checkpoint(const Checkpoint& ckpt) {
        AggNetConfig cfg = AggNetConfig::from_json(ckpt.metadata.value("config", nlohmann::json::object()));
        AggNet net(cfg, 1);
        read_model_tensors(ckpt, net.params_);
        return net;
    }

private:
    AggNetConfig cfg_;
    ModelParams<T> params_;
    std::unique_ptr<BnState<T>> bn1_, bn2_;
    Param<T>* bn1_gamma_ = nullptr;
    Param<T>* bn1_beta_ = nullptr;
    Param<T>* conv1_w_ = nullptr;
    Param<T>* conv1_b_ = nullptr;
    Param<T>* bn2_gamma_ = nullptr;
    Param<T>* bn2_beta_ = nullptr;
    Param<T>* conv2_w_ = nullptr;
    Param<T>* conv2_b_ = nullptr;
    Param<T>* fc_out_w_ = nullptr;
    Param<T>* fc_out_b_ = nullptr;
};

} // namespace glcn
