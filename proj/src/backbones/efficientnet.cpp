#include <torch/torch.h>

#include "cataract/backbones.hpp"

namespace cataract::models {

namespace {

class SqueezeExcitationImpl : public torch::nn::Module {
public:
    SqueezeExcitationImpl(std::int64_t channels, std::int64_t squeezed) {
        fc1_ = register_module("fc1", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, squeezed, 1)));
        fc2_ = register_module("fc2", torch::nn::Conv2d(torch::nn::Conv2dOptions(squeezed, channels, 1)));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto s = torch::adaptive_avg_pool2d(x, {1, 1});
        s = torch::sigmoid(fc2_(torch::silu(fc1_(s))));
        return x * s;
    }

private:
    torch::nn::Conv2d fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(SqueezeExcitation);

class MBConvImpl : public torch::nn::Module {
public:
    MBConvImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t expand)
        : use_residual_(stride == 1 && in == out) {
        const std::int64_t expanded = in * expand;
        Seq block;
        if (expanded != in) {
            block->push_back(conv_norm_act(in, expanded, 1, 1, 1, Activation::silu));
        }
        block->push_back(conv_norm_act(expanded, expanded, kernel, stride, expanded, Activation::silu));
        block->push_back(SqueezeExcitation(expanded, std::max<std::int64_t>(1, in / 4)));
        block->push_back(conv_norm_act(expanded, out, 1, 1, 1, Activation::none));
        block_ = register_module("block", block);
    }

    torch::Tensor forward(torch::Tensor x) {
        auto y = block_->forward(x);
        return use_residual_ ? y + x : y;
    }

private:
    bool use_residual_;
    Seq block_{nullptr};
};
TORCH_MODULE(MBConv);

class EfficientNetB0 : public ConvBackbone {
public:
    EfficientNetB0() {
        struct Setting {
            std::int64_t expand, kernel, stride, in, out, layers;
        };
        constexpr Setting settings[] = {
            {1, 3, 1, 32, 16, 1},  {6, 3, 2, 16, 24, 2},  {6, 5, 2, 24, 40, 2},   {6, 3, 2, 40, 80, 3},
            {6, 5, 1, 80, 112, 3}, {6, 5, 2, 112, 192, 4}, {6, 3, 1, 192, 320, 1},
        };
        Seq features;
        features->push_back(conv_norm_act(3, 32, 3, 2, 1, Activation::silu));
        for (const auto& s : settings) {
            Seq stage;
            for (std::int64_t i = 0; i < s.layers; ++i) {
                stage->push_back(MBConv(i == 0 ? s.in : s.out, s.out, s.kernel, i == 0 ? s.stride : 1, s.expand));
            }
            features->push_back(stage);
        }
        features->push_back(conv_norm_act(320, 1280, 1, 1, 1, Activation::silu));
        add_sequential_stages("features", features);
    }

    std::int64_t feature_dim() const override { return 1280; }
};

} // namespace

std::shared_ptr<ConvBackbone> make_efficientnet_b0() {
    auto net = std::make_shared<EfficientNetB0>();
    init_backbone_weights(*net);
    return net;
}

} // namespace cataract::models
