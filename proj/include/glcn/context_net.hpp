#pragma once

// The context network: strided conv backbone over the full image, then a
// 1x1 conv with sigmoid producing two saliency maps (malignant, benign) on
// the grid_factor-downscaled grid. Image-level scores pool the top fraction
// of each map; training uses binary cross-entropy against image-level
// has-malignant / has-benign labels.

#include <string>
#include <vector>

#include "glcn/maps.hpp"
#include "glcn/nets_common.hpp"

namespace glcn {

struct ContextNetConfig {
    std::vector<std::int64_t> widths = {8, 16, 32, 32}; // one stride-2 block per entry
    std::int64_t pre_downsample = 1;                    // 1, 2 or 4: mean-pool factor before the backbone
    std::int64_t grid_factor = 16;
    double pool_fraction = 0.02; // t in (0,1]

    void validate() const {
        GLCN_CHECK(!widths.empty(), "context net needs at least one block");
        std::int64_t total = pre_downsample;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            GLCN_CHECK(widths[i] > 0, "widths must be positive");
            total *= 2;
        }
        GLCN_CHECK(pre_downsample == 1 || pre_downsample == 2 || pre_downsample == 4,
                   "pre_downsample must be 1, 2 or 4");
        GLCN_CHECK(total == grid_factor, "backbone stride ", total, " must equal grid factor ",
                   grid_factor);
        GLCN_CHECK(pool_fraction > 0 && pool_fraction <= 1, "pool fraction t must be in (0,1]");
    }

    nlohmann::json to_json() const {
        return {{"widths", widths},
                {"pre_downsample", pre_downsample},
                {"grid_factor", grid_factor},
                {"pool_fraction", pool_fraction}};
    }
    static ContextNetConfig from_json(const nlohmann::json& j) {
        ContextNetConfig c;
        if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<std::int64_t>>();
        c.pre_downsample = j.value("pre_downsample", c.pre_downsample);
        c.grid_factor = j.value("grid_factor", c.grid_factor);
        c.pool_fraction = j.value("pool_fraction", c.pool_fraction);
        return c;
    }
};

// Mean of the top ceil(t*h*w) entries of one map.
template <typename T>
T pooled_image_score(const Tensor<T>& map, double t) {
    GLCN_CHECK(map.rank() == 2, "image score expects a [h,w] map");
    GLCN_CHECK(t > 0 && t <= 1, "pool fraction t must be in (0,1]");
    const std::int64_t cells = map.numel();
    const std::int64_t k = std::int64_t(std::ceil(t * double(cells)));
    Tensor<T> flat({1, cells}, std::vector<T>(map.data));
    return topk_mean_forward(flat, k).data[0];
}

template <typename T>
std::pair<T, T> image_scores(const SaliencyPair<T>& sal, double t) {
    return {pooled_image_score(sal.malignant, t), pooled_image_score(sal.benign, t)};
}

template <typename T>
class ContextNet {
public:
    using Id = typename Tape<T>::Id;

    explicit ContextNet(ContextNetConfig config, std::uint64_t init_seed = 1) : cfg_(std::move(config)) {
        cfg_.validate();
        Rng rng = derive_rng(init_seed, {tag("context-net")});
        std::int64_t cin = 1;
        for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
            blocks_.emplace_back(std::make_unique<ConvBnBlock<T>>());
            blocks_.back()->init(params_, cat("conv", i + 1), 3, cin, cfg_.widths[i], rng);
            cin = cfg_.widths[i];
        }
        head_w_ = params_.add("head.weight", he_init<T>({1, 1, cin, 2}, cin, rng));
        head_b_ = params_.add("head.bias", Tensor<T>({2}));
    }

    const ContextNetConfig& config() const { return cfg_; }
    ModelParams<T>& params() { return params_; }
    const ModelParams<T>& params() const { return params_; }

    // Input [N,H,W,1]; output the sigmoid saliency stack [N,h,w,2].
    Id forward_saliency(Tape<T>& tape, Id x, std::unordered_map<std::string, Id>& bound, BnMode mode) {
        const Shape& s = tape.value(x).shape;
        GLCN_CHECK(s.size() == 4 && s[3] == 1, "context net expects [N,H,W,1], got ", shape_str(s));
        GLCN_CHECK(s[1] % cfg_.grid_factor == 0 && s[2] % cfg_.grid_factor == 0, "image dims ", s[1], "x",
                   s[2], " not divisible by grid factor ", cfg_.grid_factor);
        Id cur = x;
        for (std::int64_t d = cfg_.pre_downsample; d > 1; d /= 2) cur = tape.avg_pool2(cur);
        for (auto& block : blocks_) cur = block->forward(tape, cur, bound, mode, 2);
        Id logits = tape.conv2d(cur, bound.at("head.weight"), bound.at("head.bias"), Padding::Same);
        return tape.sigmoid(logits);
    }

    // Image-level probabilities via top-k pooling, [N] per head.
    std::pair<Id, Id> forward_scores(Tape<T>& tape, Id saliency) {
        const Shape& s = tape.value(saliency).shape;
        const std::int64_t n = s[0], cells = s[1] * s[2];
        const std::int64_t k = std::int64_t(std::ceil(cfg_.pool_fraction * double(cells)));
        Id mal = tape.reshape(tape.slice_last(saliency, 0), {n, cells});
        Id ben = tape.reshape(tape.slice_last(saliency, 1), {n, cells});
        return {tape.topk_mean(mal, k), tape.topk_mean(ben, k)};
    }

    SaliencyPair<T> saliency_forward(const Tensor<T>& image) {
        Tensor<T> batch;
        if (image.rank() == 2)
            batch = Tensor<T>({1, image.shape[0], image.shape[1], 1}, std::vector<T>(image.data));
        else if (image.rank() == 3)
            batch = Tensor<T>({1, image.shape[0], image.shape[1], 1}, std::vector<T>(image.data));
        else
            fail("saliency_forward expects a single [H,W] image");
        Tape<T> tape;
        auto bound = bind_params(tape, params_);
        Id sal = forward_saliency(tape, tape.input(std::move(batch)), bound, BnMode::Eval);
        const Shape& s = tape.value(sal).shape;
        SaliencyPair<T> out;
        out.malignant = Tensor<T>({s[1], s[2]});
        out.benign = Tensor<T>({s[1], s[2]});
        const T* data = tape.value(sal).data.data();
        for (std::int64_t p = 0; p < s[1] * s[2]; ++p) {
            out.malignant.data[std::size_t(p)] = data[2 * p];
            out.benign.data[std::size_t(p)] = data[2 * p + 1];
        }
        return out;
    }

    Checkpoint to_checkpoint(nlohmann::json extra = {}) const {
        Checkpoint ckpt;
        ckpt.metadata = std::move(extra);
        ckpt.metadata["model"] = "context";
        ckpt.metadata["config"] = cfg_.to_json();
        put_model_tensors(ckpt, params_);
        return ckpt;
    }

    static ContextNet from_checkpoint(const Checkpoint& ckpt) {
        ContextNetConfig cfg =
            ContextNetConfig::from_json(ckpt.metadata.value("config", nlohmann::json::object()));
        ContextNet net(cfg, 1);
        read_model_tensors(ckpt, net.params_);
        return net;
    }

private:
    ContextNetConfig cfg_;
    ModelParams<T> params_;
    std::vector<std::unique_ptr<ConvBnBlock<T>>> blocks_;
    Param<T>* head_w_ = nullptr;
    Param<T>* head_b_ = nullptr;
};

} // namespace glcn
