#pragma once

// f_loc: the patch classifier. Conv backbone (conv -> BN -> ReLU -> 2x2
// mean downsample per block), global average pooling, a 32-unit embedding
// layer with no activation after it, and a 4-class head reading the
// embedding directly. The 32-dim bottleneck is the sole path between the
// backbone and the logits.

#include <string>
#include <vector>

#include "glcn/maps.hpp"
#include "glcn/nets_common.hpp"

namespace glcn {

struct LocalNetConfig {
    std::vector<std::int64_t> widths = {16, 32, 64, 128}; // one conv block per entry
    std::int64_t resolution = 64;                         // patch side S

    void validate() const {
        GLCN_CHECK(widths.size() >= 2, "local net needs depth >= 2");
        std::int64_t r = resolution;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            GLCN_CHECK(widths[i] > 0, "widths must be positive");
            GLCN_CHECK(r % 2 == 0, "resolution ", resolution, " not divisible by 2^depth");
            r /= 2;
        }
        GLCN_CHECK(r >= 1, "too many blocks for resolution ", resolution);
    }

    nlohmann::json to_json() const { return {{"widths", widths}, {"resolution", resolution}}; }
    static LocalNetConfig from_json(const nlohmann::json& j) {
        LocalNetConfig c;
        if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<std::int64_t>>();
        c.resolution = j.value("resolution", c.resolution);
        return c;
    }
};

template <typename T>
class LocalNet {
public:
    using Id = typename Tape<T>::Id;

    explicit LocalNet(LocalNetConfig config, std::uint64_t init_seed = 1) : cfg_(std::move(config)) {
        cfg_.validate();
        Rng rng = derive_rng(init_seed, {tag("local-net")});
        std::int64_t cin = 1;
        for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
            blocks_.emplace_back(std::make_unique<ConvBnBlock<T>>());
            blocks_.back()->init(params_, cat("conv", i + 1), 3, cin, cfg_.widths[i], rng);
            cin = cfg_.widths[i];
        }
        fc_embed_w_ = params_.add("fc_embed.weight", he_init<T>({cin, kEmbeddingDim}, cin, rng));
        fc_embed_b_ = params_.add("fc_embed.bias", Tensor<T>({kEmbeddingDim}));
        fc_out_w_ = params_.add("fc_out.weight", he_init<T>({kEmbeddingDim, 4}, kEmbeddingDim, rng));
        fc_out_b_ = params_.add("fc_out.bias", Tensor<T>({4}));
    }

    const LocalNetConfig& config() const { return cfg_; }
    ModelParams<T>& params() { return params_; }
    const ModelParams<T>& params() const { return params_; }

    struct Forward {
        Id embedding; // [N,32]
        Id logits;    // [N,4]
    };

    // Input [N,S,S,1] (or [S,S,1]).
    Forward forward(Tape<T>& tape, Id x, std::unordered_map<std::string, Id>& bound, BnMode mode) {
        check_input(tape.value(x).shape);
        Id cur = x;
        for (auto& block : blocks_) {
            cur = block->forward(tape, cur, bound, mode);
            cur = tape.avg_pool2(cur);
        }
        Id pooled = tape.global_avg_pool(cur);
        Id h = tape.dense(pooled, bound.at("fc_embed.weight"), bound.at("fc_embed.bias"));
        Id logits = tape.dense(h, bound.at("fc_out.weight"), bound.at("fc_out.bias"));
        return {h, logits};
    }

    // Eval-mode embeddings for a batch of patches, [N,32].
    Tensor<T> embed_batch(const Tensor<T>& patches) {
        Tape<T> tape;
        auto bound = bind_params(tape, params_);
        Id x = tape.input(patches);
        Forward f = forward(tape, x, bound, BnMode::Eval);
        return tape.value(f.embedding);
    }

    std::vector<T> embed(const Tensor<T>& patch) {
        Tensor<T> batch({1, cfg_.resolution, cfg_.resolution, 1}, std::vector<T>(patch.data));
        return embed_batch(batch).data;
    }

    Tensor<T> logits_batch(const Tensor<T>& patches) {
        Tape<T> tape;
        auto bound = bind_params(tape, params_);
        Id x = tape.input(patches);
        Forward f = forward(tape, x, bound, BnMode::Eval);
        return tape.value(f.logits);
    }

    std::vector<T> patch_logits(const Tensor<T>& patch) {
        Tensor<T> batch({1, cfg_.resolution, cfg_.resolution, 1}, std::vector<T>(patch.data));
        return logits_batch(batch).data;
    }

    // The classification layer applied to a given embedding; used both by
    // the bottleneck structural test and by callers holding cached h.
    std::vector<T> logits_from_embedding(const std::vector<T>& h) const {
        GLCN_CHECK(std::int64_t(h.size()) == kEmbeddingDim, "embedding must have 32 entries");
        std::vector<T> out(4);
        for (int j = 0; j < 4; ++j) out[std::size_t(j)] = fc_out_b_->value.data[std::size_t(j)];
        for (std::int64_t a = 0; a < kEmbeddingDim; ++a)
            for (int j = 0; j < 4; ++j)
                out[std::size_t(j)] += h[std::size_t(a)] * fc_out_w_->value.data[std::size_t(a * 4 + j)];
        return out;
    }

    Checkpoint to_checkpoint(nlohmann::json extra = {}) const {
        Checkpoint ckpt;
        ckpt.metadata = std::move(extra);
        ckpt.metadata["model"] = "local";
        ckpt.metadata["config"] = cfg_.to_json();
        ckpt.metadata["class_order"] = kPatchClassOrder;
        put_model_tensors(ckpt, params_);
        return ckpt;
    }

    static LocalNet from_checkpoint(const Checkpoint& ckpt) {
        LocalNetConfig cfg = LocalNetConfig::from_json(ckpt.metadata.value("config", nlohmann::json::object()));
        LocalNet net(cfg, 1);
        read_model_tensors(ckpt, net.params_);
        if (ckpt.metadata.contains("class_order"))
            GLCN_CHECK(ckpt.metadata["class_order"].get<std::vector<std::string>>() == kPatchClassOrder,
                       "checkpoint class order differs from (malignant, benign, outside, negative)");
        return net;
    }

private:
    void check_input(const Shape& s) const {
        const bool ok = (s.size() == 4 && s[1] == cfg_.resolution && s[2] == cfg_.resolution && s[3] == 1) ||
                        (s.size() == 3 && s[0] == cfg_.resolution && s[1] == cfg_.resolution && s[2] == 1);
        GLCN_CHECK(ok, "f_loc expects [N,", cfg_.resolution, ",", cfg_.resolution, ",1] patches, got ",
                   shape_str(s));
    }

    LocalNetConfig cfg_;
    ModelParams<T> params_;
    std::vector<std::unique_ptr<ConvBnBlock<T>>> blocks_;
    Param<T>* fc_embed_w_ = nullptr;
    Param<T>* fc_embed_b_ = nullptr;
    Param<T>* fc_out_w_ = nullptr;
    Param<T>* fc_out_b_ = nullptr;
};

} // namespace glcn
