#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/any.h>
#include <torch/nn/modules/container/sequential.h>

namespace cataract::models {

/// Sequential with a concrete Tensor -> Tensor forward, so containers nest.
class SeqImpl : public torch::nn::SequentialImpl {
public:
    using torch::nn::SequentialImpl::SequentialImpl;
    torch::Tensor forward(torch::Tensor x) { return torch::nn::SequentialImpl::forward(std::move(x)); }
};
TORCH_MODULE(Seq);

/// Feature extractor mapping an N x 3 x 224 x 224 batch to pooled N x D
/// features. Submodule names follow the torchvision layout of the same
/// architecture so exported weights line up key-for-key.
class Backbone : public torch::nn::Module {
public:
    virtual torch::Tensor forward(torch::Tensor x) = 0;
    virtual std::int64_t feature_dim() const = 0;
    virtual bool is_convolutional() const { return false; }
};

/// A convolutional backbone expressed as an ordered list of named stages, the
/// outputs of which are the spatial feature maps Grad-CAM can target.
class ConvBackbone : public Backbone {
public:
    struct Stage {
        std::string name;
        torch::nn::AnyModule module;
    };

    /// Called on a stage output; the returned tensor replaces it downstream.
    using Tap = std::function<torch::Tensor(const torch::Tensor&)>;

    torch::Tensor forward(torch::Tensor x) override;
    bool is_convolutional() const override { return true; }

    /// Runs the network, passing the output of stage `layer` through `tap`.
    /// Throws UnsupportedLayerError if no stage has that name.
    torch::Tensor forward_tapped(torch::Tensor x, const std::string& layer, const Tap& tap);

    /// Output of the final stage (after any post-processing), before pooling.
    torch::Tensor forward_spatial(torch::Tensor x);

    std::vector<std::string> layer_names() const;
    /// The final convolutional feature map before global pooling.
    virtual std::string default_target_layer() const { return stages_.back().name; }

protected:
    void add_stage(std::string name, torch::nn::AnyModule module);
    /// Registers `seq` under `prefix` and exposes each child as "prefix.<child>".
    void add_sequential_stages(const std::string& prefix, Seq seq);
    /// Applied after the last stage, before global average pooling.
    virtual torch::Tensor post_features(torch::Tensor x) { return x; }

private:
    torch::Tensor pool(const torch::Tensor& x) const;

    std::vector<Stage> stages_;
};

std::shared_ptr<ConvBackbone> make_mobilenet_v2();
std::shared_ptr<ConvBackbone> make_resnet50();
std::shared_ptr<ConvBackbone> make_densenet121();
std::shared_ptr<ConvBackbone> make_efficientnet_b0();

struct VitConfig {
    std::int64_t embed_dim;
    std::int64_t depth;
    std::int64_t heads;
    std::int64_t mlp_dim;
    std::int64_t patch = 16;
    std::int64_t image_size = 224;
};
std::shared_ptr<Backbone> make_vit(const VitConfig& cfg);

struct SwinConfig {
    std::int64_t embed_dim = 128;
    std::vector<std::int64_t> depths{2, 2, 18, 2};
    std::vector<std::int64_t> heads{4, 8, 16, 32};
    std::int64_t window = 7;
    std::int64_t patch = 4;
};
std::shared_ptr<Backbone> make_swin(const SwinConfig& cfg);

/// Building blocks shared by the CNN backbones.
enum class Activation { none, relu, relu6, silu };

/// Conv (no bias) -> BatchNorm -> activation, as a Sequential named 0/1/2.
Seq conv_norm_act(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride = 1,
                                    std::int64_t groups = 1, Activation act = Activation::relu,
                                    double bn_eps = 1e-5);

/// Kaiming-normal (fan-out) convolutions, unit/zero norms, clipped-normal
/// (std 0.02) linears. Applied once after construction.
void init_backbone_weights(torch::nn::Module& module);

} // namespace cataract::models
