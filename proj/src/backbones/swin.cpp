#include <torch/torch.h>

#include "cataract/backbones.hpp"
#include "cataract/errors.hpp"

namespace cataract::models {

namespace {

/// NCHW -> NHWC.
class ToChannelsLastImpl : public torch::nn::Module {
public:
    torch::Tensor forward(const torch::Tensor& x) { return x.permute({0, 2, 3, 1}); }
};
TORCH_MODULE(ToChannelsLast);

class ShiftedWindowAttentionImpl : public torch::nn::Module {
public:
    ShiftedWindowAttentionImpl(std::int64_t dim, std::int64_t window, std::int64_t shift, std::int64_t heads)
        : window_(window), shift_(shift), heads_(heads) {
        qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
        proj = register_module("proj", torch::nn::Linear(dim, dim));
        relative_position_bias_table =
            register_parameter("relative_position_bias_table", torch::zeros({(2 * window - 1) * (2 * window - 1), heads}));
        relative_position_index = register_buffer("relative_position_index", make_relative_index(window));
        torch::NoGradGuard g;
        relative_position_bias_table.normal_(0.0, 0.02).clamp_(-0.04, 0.04);
    }

    /// x: B x H x W x C.
    torch::Tensor forward(const torch::Tensor& input) {
        const auto B = input.size(0);
        const auto H = input.size(1);
        const auto W = input.size(2);
        const auto C = input.size(3);
        const auto w = window_;
        const auto pad_b = (w - H % w) % w;
        const auto pad_r = (w - W % w) % w;
        auto x = torch::constant_pad_nd(input, {0, 0, 0, pad_r, 0, pad_b});
        const auto pH = x.size(1);
        const auto pW = x.size(2);
        // No shift when a single window covers the map.
        const auto shift_h = w >= pH ? 0 : shift_;
        const auto shift_w = w >= pW ? 0 : shift_;
        const bool shifted = shift_h + shift_w > 0;
        if (shifted) {
            x = torch::roll(x, {-shift_h, -shift_w}, {1, 2});
        }
        const auto nw = (pH / w) * (pW / w);
        const auto N = w * w;
        x = x.view({B, pH / w, w, pW / w, w, C}).permute({0, 1, 3, 2, 4, 5}).reshape({B * nw, N, C});

        auto qkv_t = qkv(x).reshape({x.size(0), N, 3, heads_, C / heads_}).permute({2, 0, 3, 1, 4});
        auto q = qkv_t[0] * std::pow(static_cast<double>(C / heads_), -0.5);
        auto k = qkv_t[1];
        auto v = qkv_t[2];
        auto attn = q.matmul(k.transpose(-2, -1));
        auto bias = relative_position_bias_table.index_select(0, relative_position_index)
                        .view({N, N, heads_})
                        .permute({2, 0, 1})
                        .unsqueeze(0);
        attn = attn + bias;
        if (shifted) {
            auto mask = window_mask(pH, pW, shift_h, shift_w, x.options());
            attn = attn.view({B, nw, heads_, N, N}) + mask.unsqueeze(1).unsqueeze(0);
            attn = attn.view({B * nw, heads_, N, N});
        }
        attn = torch::softmax(attn, -1);
        x = attn.matmul(v).transpose(1, 2).reshape({B * nw, N, C});
        x = proj(x);
        x = x.view({B, pH / w, pW / w, w, w, C}).permute({0, 1, 3, 2, 4, 5}).reshape({B, pH, pW, C});
        if (shifted) {
            x = torch::roll(x, {shift_h, shift_w}, {1, 2});
        }
        return x.slice(1, 0, H).slice(2, 0, W).contiguous();
    }

    torch::nn::Linear qkv{nullptr}, proj{nullptr};
    torch::Tensor relative_position_bias_table;
    torch::Tensor relative_position_index;

private:
    static torch::Tensor make_relative_index(std::int64_t w) {
        auto coords = torch::stack(torch::meshgrid({torch::arange(w), torch::arange(w)}, "ij")).flatten(1);
        auto rel = (coords.unsqueeze(2) - coords.unsqueeze(1)).permute({1, 2, 0}).contiguous();
        rel.select(2, 0).add_(w - 1).mul_(2 * w - 1);
        rel.select(2, 1).add_(w - 1);
        return rel.sum(-1).flatten();
    }

    torch::Tensor window_mask(std::int64_t pH, std::int64_t pW, std::int64_t sh, std::int64_t sw,
                              const torch::TensorOptions& opts) const {
        const auto w = window_;
        auto mask = torch::zeros({pH, pW}, opts);
        const std::int64_t hs[][2] = {{0, pH - w}, {pH - w, pH - sh}, {pH - sh, pH}};
        const std::int64_t ws[][2] = {{0, pW - w}, {pW - w, pW - sw}, {pW - sw, pW}};
        double region = 0.0;
        for (const auto& h : hs) {
            for (const auto& c : ws) {
                mask.slice(0, h[0], h[1]).slice(1, c[0], c[1]).fill_(region);
                region += 1.0;
            }
        }
        mask = mask.view({pH / w, w, pW / w, w}).permute({0, 2, 1, 3}).reshape({(pH / w) * (pW / w), w * w});
        auto diff = mask.unsqueeze(1) - mask.unsqueeze(2);
        return diff.ne(0).to(opts.dtype()) * -100.0;
    }

    std::int64_t window_;
    std::int64_t shift_;
    std::int64_t heads_;
};
TORCH_MODULE(ShiftedWindowAttention);

class SwinBlockImpl : public torch::nn::Module {
public:
    SwinBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t window, std::int64_t shift) {
        norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
        attn = register_module("attn", ShiftedWindowAttention(dim, window, shift, heads));
        norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
        mlp = register_module("mlp", Seq(torch::nn::Linear(dim, 4 * dim), torch::nn::GELU(),
                                                          torch::nn::Dropout(0.0), torch::nn::Linear(4 * dim, dim),
                                                          torch::nn::Dropout(0.0)));
    }

    torch::Tensor forward(torch::Tensor x) {
        x = x + attn(norm1(x));
        return x + mlp->forward(norm2(x));
    }

    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    ShiftedWindowAttention attn{nullptr};
    Seq mlp{nullptr};
};
TORCH_MODULE(SwinBlock);

class PatchMergingImpl : public torch::nn::Module {
public:
    explicit PatchMergingImpl(std::int64_t dim) {
        reduction = register_module("reduction", torch::nn::Linear(torch::nn::LinearOptions(4 * dim, 2 * dim).bias(false)));
        norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({4 * dim})));
    }

    torch::Tensor forward(const torch::Tensor& input) {
        const auto H = input.size(1);
        const auto W = input.size(2);
        auto x = torch::constant_pad_nd(input, {0, 0, 0, W % 2, 0, H % 2});
        using torch::indexing::Slice;
        auto x0 = x.index({Slice(), Slice(0, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
        auto x1 = x.index({Slice(), Slice(1, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
        auto x2 = x.index({Slice(), Slice(0, torch::indexing::None, 2), Slice(1, torch::indexing::None, 2)});
        auto x3 = x.index({Slice(), Slice(1, torch::indexing::None, 2), Slice(1, torch::indexing::None, 2)});
        return reduction(norm(torch::cat({x0, x1, x2, x3}, -1)));
    }

    torch::nn::Linear reduction{nullptr};
    torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(PatchMerging);

class SwinTransformer : public Backbone {
public:
    explicit SwinTransformer(const SwinConfig& cfg) {
        if (cfg.depths.size() != cfg.heads.size() || cfg.depths.empty()) {
            throw ConstructionError("Swin depths and heads must have the same non-zero length");
        }
        Seq features;
        features->push_back(Seq(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(3, cfg.embed_dim, cfg.patch).stride(cfg.patch)),
            ToChannelsLast(), torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.embed_dim}))));
        std::int64_t dim = cfg.embed_dim;
        for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
            Seq stage;
            for (std::int64_t b = 0; b < cfg.depths[s]; ++b) {
                stage->push_back(SwinBlock(dim, cfg.heads[s], cfg.window, b % 2 == 0 ? 0 : cfg.window / 2));
            }
            features->push_back(stage);
            if (s + 1 < cfg.depths.size()) {
                features->push_back(PatchMerging(dim));
                dim *= 2;
            }
        }
        features_ = register_module("features", features);
        norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
        dim_ = dim;
    }

    torch::Tensor forward(torch::Tensor x) override {
        auto y = norm_(features_->forward(x)); // B x h x w x C
        return y.mean({1, 2});
    }

    std::int64_t feature_dim() const override { return dim_; }

private:
    Seq features_{nullptr};
    torch::nn::LayerNorm norm_{nullptr};
    std::int64_t dim_ = 0;
};

} // namespace

std::shared_ptr<Backbone> make_swin(const SwinConfig& cfg) {
    auto net = std::make_shared<SwinTransformer>(cfg);
    init_backbone_weights(*net);
    return net;
}

} // namespace cataract::models
