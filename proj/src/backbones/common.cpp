#include <torch/torch.h>

#include "cataract/backbones.hpp"
#include "cataract/errors.hpp"

namespace cataract::models {

void ConvBackbone::add_stage(std::string name, torch::nn::AnyModule module) {
    stages_.push_back({std::move(name), std::move(module)});
}

void ConvBackbone::add_sequential_stages(const std::string& prefix, Seq seq) {
    register_module(prefix, seq);
    const auto children = seq->named_children();
    std::size_t i = 0;
    for (const auto& any : *seq) {
        add_stage(prefix + "." + children[i].key(), any);
        ++i;
    }
}

torch::Tensor ConvBackbone::pool(const torch::Tensor& x) const {
    return torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
}

torch::Tensor ConvBackbone::forward_spatial(torch::Tensor x) {
    for (auto& stage : stages_) {
        x = stage.module.forward(x);
    }
    return post_features(x);
}

torch::Tensor ConvBackbone::forward(torch::Tensor x) {
    return pool(forward_spatial(std::move(x)));
}

torch::Tensor ConvBackbone::forward_tapped(torch::Tensor x, const std::string& layer, const Tap& tap) {
    const bool known = std::any_of(stages_.begin(), stages_.end(), [&](const Stage& s) { return s.name == layer; });
    if (!known) {
        throw UnsupportedLayerError("backbone has no spatial layer named '" + layer + "'");
    }
    for (auto& stage : stages_) {
        x = stage.module.forward(x);
        if (stage.name == layer) {
            x = tap(x);
        }
    }
    return pool(post_features(x));
}

std::vector<std::string> ConvBackbone::layer_names() const {
    std::vector<std::string> names;
    names.reserve(stages_.size());
    for (const auto& s : stages_) {
        names.push_back(s.name);
    }
    return names;
}

Seq conv_norm_act(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                                    std::int64_t groups, Activation act, double bn_eps) {
    Seq seq;
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)
                                         .stride(stride)
                                         .padding((kernel - 1) / 2)
                                         .groups(groups)
                                         .bias(false)));
    seq->push_back(torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(out).eps(bn_eps)));
    switch (act) {
    case Activation::relu:
        seq->push_back(torch::nn::ReLU(torch::nn::ReLUOptions(true)));
        break;
    case Activation::relu6:
        seq->push_back(torch::nn::ReLU6(torch::nn::ReLU6Options(true)));
        break;
    case Activation::silu:
        seq->push_back(torch::nn::SiLU());
        break;
    case Activation::none:
        break;
    }
    return seq;
}

void init_backbone_weights(torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    for (auto& m : module.modules(/*include_self=*/true)) {
        if (auto* conv = m->as<torch::nn::Conv2d>()) {
            torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
            if (conv->bias.defined()) {
                conv->bias.zero_();
            }
        } else if (auto* bn = m->as<torch::nn::BatchNorm2d>()) {
            bn->weight.fill_(1.0);
            bn->bias.zero_();
        } else if (auto* ln = m->as<torch::nn::LayerNorm>()) {
            ln->weight.fill_(1.0);
            ln->bias.zero_();
        } else if (auto* lin = m->as<torch::nn::Linear>()) {
            lin->weight.normal_(0.0, 0.02).clamp_(-0.04, 0.04);
            if (lin->bias.defined()) {
                lin->bias.zero_();
            }
        }
    }
}

} // namespace cataract::models
