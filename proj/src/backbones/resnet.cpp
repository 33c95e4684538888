#include <torch/torch.h>

#include "cataract/backbones.hpp"

namespace cataract::models {

namespace {

torch::nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding((k - 1) / 2).bias(false));
}

class BottleneckImpl : public torch::nn::Module {
public:
    static constexpr std::int64_t kExpansion = 4;

    BottleneckImpl(std::int64_t in, std::int64_t width, std::int64_t stride) {
        const std::int64_t out = width * kExpansion;
        conv1_ = register_module("conv1", conv(in, width, 1));
        bn1_ = register_module("bn1", torch::nn::BatchNorm2d(width));
        conv2_ = register_module("conv2", conv(width, width, 3, stride));
        bn2_ = register_module("bn2", torch::nn::BatchNorm2d(width));
        conv3_ = register_module("conv3", conv(width, out, 1));
        bn3_ = register_module("bn3", torch::nn::BatchNorm2d(out));
        if (stride != 1 || in != out) {
            Seq ds;
            ds->push_back(conv(in, out, 1, stride));
            ds->push_back(torch::nn::BatchNorm2d(out));
            downsample_ = register_module("downsample", ds);
        }
    }

    torch::Tensor forward(torch::Tensor x) {
        auto y = torch::relu(bn1_(conv1_(x)));
        y = torch::relu(bn2_(conv2_(y)));
        y = bn3_(conv3_(y));
        const auto identity = downsample_ ? downsample_->forward(x) : x;
        return torch::relu(y + identity);
    }

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
    torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
    Seq downsample_{nullptr};
};
TORCH_MODULE(Bottleneck);

class ResNet50 : public ConvBackbone {
public:
    ResNet50() {
        auto conv1 = register_module("conv1", torch::nn::Conv2d(
                                                  torch::nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
        auto bn1 = register_module("bn1", torch::nn::BatchNorm2d(64));
        add_stage("conv1", torch::nn::AnyModule(conv1));
        add_stage("bn1", torch::nn::AnyModule(bn1));
        add_stage("relu", torch::nn::AnyModule(torch::nn::ReLU(torch::nn::ReLUOptions(true))));
        add_stage("maxpool",
                  torch::nn::AnyModule(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1))));

        constexpr std::int64_t blocks[] = {3, 4, 6, 3};
        std::int64_t in = 64;
        for (int stage = 0; stage < 4; ++stage) {
            const std::int64_t width = 64LL << stage;
            Seq layer;
            for (std::int64_t b = 0; b < blocks[stage]; ++b) {
                layer->push_back(Bottleneck(in, width, (b == 0 && stage > 0) ? 2 : 1));
                in = width * BottleneckImpl::kExpansion;
            }
            const auto name = "layer" + std::to_string(stage + 1);
            register_module(name, layer);
            add_stage(name, torch::nn::AnyModule(layer));
        }
    }

    std::int64_t feature_dim() const override { return 2048; }
};

} // namespace

std::shared_ptr<ConvBackbone> make_resnet50() {
    auto net = std::make_shared<ResNet50>();
    init_backbone_weights(*net);
    return net;
}

} // namespace cataract::models
