#include <cmath>

#include <torch/torch.h>

#include "cataract/backbones.hpp"
#include "cataract/errors.hpp"

namespace cataract::models {

namespace {

/// Multi-head self-attention with a packed input projection
/// (in_proj_weight / in_proj_bias / out_proj).
class SelfAttentionImpl : public torch::nn::Module {
public:
    SelfAttentionImpl(std::int64_t dim, std::int64_t heads) : heads_(heads) {
        in_proj_weight = register_parameter("in_proj_weight", torch::empty({3 * dim, dim}));
        in_proj_bias = register_parameter("in_proj_bias", torch::zeros({3 * dim}));
        out_proj = register_module("out_proj", torch::nn::Linear(dim, dim));
        torch::NoGradGuard g;
        torch::nn::init::xavier_uniform_(in_proj_weight);
    }

    torch::Tensor forward(const torch::Tensor& x) {
        const auto B = x.size(0);
        const auto N = x.size(1);
        const auto C = x.size(2);
        auto qkv = torch::linear(x, in_proj_weight, in_proj_bias)
                       .reshape({B, N, 3, heads_, C / heads_})
                       .permute({2, 0, 3, 1, 4});
        auto attn = at::scaled_dot_product_attention(qkv[0], qkv[1], qkv[2]);
        return out_proj(attn.transpose(1, 2).reshape({B, N, C}));
    }

    torch::Tensor in_proj_weight, in_proj_bias;
    torch::nn::Linear out_proj{nullptr};

private:
    std::int64_t heads_;
};
TORCH_MODULE(SelfAttention);

Seq mlp_block(std::int64_t dim, std::int64_t hidden) {
    Seq mlp;
    mlp->push_back(torch::nn::Linear(dim, hidden));
    mlp->push_back(torch::nn::GELU());
    mlp->push_back(torch::nn::Dropout(0.0));
    mlp->push_back(torch::nn::Linear(hidden, dim));
    mlp->push_back(torch::nn::Dropout(0.0));
    return mlp;
}

class EncoderBlockImpl : public torch::nn::Module {
public:
    EncoderBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t mlp_dim) {
        ln_1 = register_module("ln_1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
        self_attention = register_module("self_attention", SelfAttention(dim, heads));
        ln_2 = register_module("ln_2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
        mlp = register_module("mlp", mlp_block(dim, mlp_dim));
    }

    torch::Tensor forward(torch::Tensor x) {
        x = x + self_attention(ln_1(x));
        return x + mlp->forward(ln_2(x));
    }

    torch::nn::LayerNorm ln_1{nullptr}, ln_2{nullptr};
    SelfAttention self_attention{nullptr};
    Seq mlp{nullptr};
};
TORCH_MODULE(EncoderBlock);

class EncoderImpl : public torch::nn::Module {
public:
    EncoderImpl(const VitConfig& cfg, std::int64_t seq_len) {
        pos_embedding = register_parameter("pos_embedding", torch::empty({1, seq_len, cfg.embed_dim}));
        layers = register_module("layers", Seq());
        for (std::int64_t i = 0; i < cfg.depth; ++i) {
            layers->push_back("encoder_layer_" + std::to_string(i), EncoderBlock(cfg.embed_dim, cfg.heads, cfg.mlp_dim));
        }
        ln = register_module("ln", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.embed_dim}).eps(1e-6)));
        torch::NoGradGuard g;
        pos_embedding.normal_(0.0, 0.02);
    }

    torch::Tensor forward(const torch::Tensor& x) { return ln(layers->forward(x + pos_embedding)); }

    torch::Tensor pos_embedding;
    Seq layers{nullptr};
    torch::nn::LayerNorm ln{nullptr};
};
TORCH_MODULE(Encoder);

class VisionTransformer : public Backbone {
public:
    explicit VisionTransformer(const VitConfig& cfg) : cfg_(cfg) {
        if (cfg.image_size % cfg.patch != 0 || cfg.embed_dim % cfg.heads != 0) {
            throw ConstructionError("inconsistent ViT configuration");
        }
        const auto grid = cfg.image_size / cfg.patch;
        class_token_ = register_parameter("class_token", torch::zeros({1, 1, cfg.embed_dim}));
        conv_proj_ = register_module(
            "conv_proj",
            torch::nn::Conv2d(torch::nn::Conv2dOptions(3, cfg.embed_dim, cfg.patch).stride(cfg.patch)));
        encoder_ = register_module("encoder", Encoder(cfg, grid * grid + 1));
    }

    torch::Tensor forward(torch::Tensor x) override {
        if (x.size(2) != cfg_.image_size || x.size(3) != cfg_.image_size) {
            throw ShapeError("ViT expects " + std::to_string(cfg_.image_size) + "x" +
                             std::to_string(cfg_.image_size) + " inputs");
        }
        auto tokens = conv_proj_(x).flatten(2).transpose(1, 2);
        auto cls = class_token_.expand({tokens.size(0), -1, -1});
        auto y = encoder_(torch::cat({cls, tokens}, 1));
        return y.select(1, 0);
    }

    std::int64_t feature_dim() const override { return cfg_.embed_dim; }

private:
    VitConfig cfg_;
    torch::Tensor class_token_;
    torch::nn::Conv2d conv_proj_{nullptr};
    Encoder encoder_{nullptr};
};

} // namespace

std::shared_ptr<Backbone> make_vit(const VitConfig& cfg) {
    auto net = std::make_shared<VisionTransformer>(cfg);
    init_backbone_weights(*net);
    return net;
}

} // namespace cataract::models
