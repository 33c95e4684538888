#include <torch/torch.h>

#include "cataract/backbones.hpp"

namespace cataract::models {

namespace {

constexpr std::int64_t kGrowth = 32;
constexpr std::int64_t kBottleneckFactor = 4;

class DenseLayerImpl : public torch::nn::Module {
public:
    explicit DenseLayerImpl(std::int64_t in) {
        const std::int64_t mid = kBottleneckFactor * kGrowth;
        norm1_ = register_module("norm1", torch::nn::BatchNorm2d(in));
        conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, mid, 1).bias(false)));
        norm2_ = register_module("norm2", torch::nn::BatchNorm2d(mid));
        conv2_ = register_module(
            "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(mid, kGrowth, 3).padding(1).bias(false)));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto y = conv1_(torch::relu(norm1_(x)));
        return conv2_(torch::relu(norm2_(y)));
    }

private:
    torch::nn::BatchNorm2d norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(DenseLayer);

class DenseBlockImpl : public torch::nn::Module {
public:
    DenseBlockImpl(std::int64_t layers, std::int64_t in) {
        for (std::int64_t i = 0; i < layers; ++i) {
            layers_.push_back(register_module("denselayer" + std::to_string(i + 1), DenseLayer(in + i * kGrowth)));
        }
    }

    torch::Tensor forward(torch::Tensor x) {
        std::vector<torch::Tensor> features{x};
        for (auto& layer : layers_) {
            features.push_back(layer(torch::cat(features, 1)));
        }
        return torch::cat(features, 1);
    }

private:
    std::vector<DenseLayer> layers_;
};
TORCH_MODULE(DenseBlock);

class TransitionImpl : public torch::nn::Module {
public:
    TransitionImpl(std::int64_t in, std::int64_t out) {
        norm_ = register_module("norm", torch::nn::BatchNorm2d(in));
        conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(false)));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        return torch::avg_pool2d(conv_(torch::relu(norm_(x))), 2, 2);
    }

private:
    torch::nn::BatchNorm2d norm_{nullptr};
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(Transition);

class DenseNet121 : public ConvBackbone {
public:
    DenseNet121() {
        constexpr std::int64_t blocks[] = {6, 12, 24, 16};
        std::int64_t channels = 64;
        Seq features;
        features->push_back("conv0", torch::nn::Conv2d(
                                         torch::nn::Conv2dOptions(3, channels, 7).stride(2).padding(3).bias(false)));
        features->push_back("norm0", torch::nn::BatchNorm2d(channels));
        features->push_back("relu0", torch::nn::ReLU(torch::nn::ReLUOptions(true)));
        features->push_back("pool0", torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1)));
        for (int b = 0; b < 4; ++b) {
            features->push_back("denseblock" + std::to_string(b + 1), DenseBlock(blocks[b], channels));
            channels += blocks[b] * kGrowth;
            if (b != 3) {
                features->push_back("transition" + std::to_string(b + 1), Transition(channels, channels / 2));
                channels /= 2;
            }
        }
        features->push_back("norm5", torch::nn::BatchNorm2d(channels));
        add_sequential_stages("features", features);
    }

    std::int64_t feature_dim() const override { return 1024; }

protected:
    torch::Tensor post_features(torch::Tensor x) override { return torch::relu(x); }
};

} // namespace

std::shared_ptr<ConvBackbone> make_densenet121() {
    auto net = std::make_shared<DenseNet121>();
    init_backbone_weights(*net);
    return net;
}

} // namespace cataract::models
