#include <torch/torch.h>

#include "cataract/backbones.hpp"

namespace cataract::models {

namespace {

class InvertedResidualImpl : public torch::nn::Module {
public:
    InvertedResidualImpl(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t expand_ratio)
        : use_residual_(stride == 1 && in == out) {
        const std::int64_t hidden = in * expand_ratio;
        Seq layers;
        if (expand_ratio != 1) {
            layers->push_back(conv_norm_act(in, hidden, 1, 1, 1, Activation::relu6));
        }
        layers->push_back(conv_norm_act(hidden, hidden, 3, stride, hidden, Activation::relu6));
        layers->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, out, 1).bias(false)));
        layers->push_back(torch::nn::BatchNorm2d(out));
        conv_ = register_module("conv", layers);
    }

    torch::Tensor forward(torch::Tensor x) {
        auto y = conv_->forward(x);
        return use_residual_ ? x + y : y;
    }

private:
    bool use_residual_;
    Seq conv_{nullptr};
};
TORCH_MODULE(InvertedResidual);

class MobileNetV2 : public ConvBackbone {
public:
    MobileNetV2() {
        struct Setting {
            std::int64_t expand, channels, repeats, stride;
        };
        constexpr Setting settings[] = {
            {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2}, {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
        };
        Seq features;
        std::int64_t in = 32;
        features->push_back(conv_norm_act(3, in, 3, 2, 1, Activation::relu6));
        for (const auto& s : settings) {
            for (std::int64_t i = 0; i < s.repeats; ++i) {
                features->push_back(InvertedResidual(in, s.channels, i == 0 ? s.stride : 1, s.expand));
                in = s.channels;
            }
        }
        features->push_back(conv_norm_act(in, kLastChannel, 1, 1, 1, Activation::relu6));
        add_sequential_stages("features", features);
    }

    std::int64_t feature_dim() const override { return kLastChannel; }

private:
    static constexpr std::int64_t kLastChannel = 1280;
};

} // namespace

std::shared_ptr<ConvBackbone> make_mobilenet_v2() {
    auto net = std::make_shared<MobileNetV2>();
    init_backbone_weights(*net);
    return net;
}

} // namespace cataract::models
