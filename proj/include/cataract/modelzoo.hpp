#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/dropout.h>
#include <torch/nn/modules/linear.h>

#include "cataract/backbones.hpp"

namespace cataract::models {

enum class BackboneName {
    resnet50,
    densenet121,
    efficientnet_b0,
    vit_tiny,
    vit_base,
    swin_base,
    deit_tiny,
    deit_base,
    mobilenet_v2,
};

enum class Regime { full_finetune, frozen_backbone };

std::string_view to_string(BackboneName name);
std::string_view to_string(Regime regime);
/// Throws RegistryError for names outside the registry.
BackboneName parse_backbone(std::string_view name);
/// Throws ConfigError for anything but "full_finetune" / "frozen_backbone".
Regime parse_regime(std::string_view name);

/// Every registered backbone, in Table order.
const std::vector<BackboneName>& registry();

std::int64_t registry_feature_dim(BackboneName name);
/// The CNN backbones (the ones Grad-CAM accepts).
bool is_cnn(BackboneName name);

struct ModelSpec {
    BackboneName backbone = BackboneName::mobilenet_v2;
    Regime regime = Regime::full_finetune;
    std::int64_t num_classes = 2;
    std::int64_t feature_dim = 1280;

    /// Spec with the registry feature dimension filled in.
    static ModelSpec of(BackboneName backbone, Regime regime = Regime::full_finetune);
};

struct SiameseSpec {
    ModelSpec backbone = ModelSpec::of(BackboneName::mobilenet_v2);
    std::int64_t projection_dim = 128;
    std::int64_t hidden_dim = 64;
    double projection_dropout = 0.3;
    double classifier_dropout = 0.3;

    std::int64_t fused_dim() const noexcept { return 2 * projection_dim; }
};

/// Common interface of single-eye and dual-eye classifiers. `right` is
/// undefined for single-eye models.
class FundusClassifier : public torch::nn::Module {
public:
    virtual torch::Tensor logits(const torch::Tensor& left, const torch::Tensor& right) = 0;
    virtual bool is_dual() const = 0;
    virtual std::shared_ptr<Backbone> backbone() const = 0;

    /// Frozen backbone: parameters stop requiring gradients and the backbone
    /// stays in eval mode (running statistics untouched) whatever train() says.
    void set_backbone_frozen(bool frozen);
    bool backbone_frozen() const noexcept { return backbone_frozen_; }

    void train(bool on = true) override;

private:
    bool backbone_frozen_ = false;
};

class SingleEyeClassifier : public FundusClassifier {
public:
    SingleEyeClassifier(std::shared_ptr<Backbone> backbone, std::int64_t num_classes);

    torch::Tensor forward(const torch::Tensor& x);
    torch::Tensor logits(const torch::Tensor& left, const torch::Tensor& right) override;
    bool is_dual() const override { return false; }
    std::shared_ptr<Backbone> backbone() const override { return backbone_; }
    torch::nn::Linear& head() { return head_; }

private:
    std::shared_ptr<Backbone> backbone_;
    torch::nn::Linear head_{nullptr};
};

/// Shared extractor -> pooled features per eye -> one shared projection
/// (+ReLU, dropout) -> concatenation -> hidden layer (+ReLU, dropout) -> logits.
class SiameseClassifier : public FundusClassifier {
public:
    SiameseClassifier(std::shared_ptr<Backbone> backbone, const SiameseSpec& spec);

    /// Per-eye embedding after the shared projection, ReLU and dropout.
    torch::Tensor embed(const torch::Tensor& x);
    torch::Tensor logits(const torch::Tensor& left, const torch::Tensor& right) override;
    bool is_dual() const override { return true; }
    std::shared_ptr<Backbone> backbone() const override { return backbone_; }

private:
    std::shared_ptr<Backbone> backbone_;
    torch::nn::Linear projection_{nullptr};
    torch::nn::Dropout projection_dropout_{nullptr};
    torch::nn::Linear hidden_{nullptr};
    torch::nn::Dropout classifier_dropout_{nullptr};
    torch::nn::Linear output_{nullptr};
};

/// A constructed classifier plus the spec it was built from.
struct ModelHandle {
    ModelSpec spec;
    std::optional<SiameseSpec> siamese;
    std::shared_ptr<FundusClassifier> module;

    /// "mobilenet_v2", "swin_base", ... or "siamese_mobilenet_v2".
    std::string name() const;
    bool is_dual() const noexcept { return siamese.has_value(); }
};

struct BuildOptions {
    bool pretrained = false;
    /// Flat named-tensor archive holding backbone weights (see export_weights).
    std::filesystem::path pretrained_weights;
    /// Seeds the global torch generator before initialization.
    std::uint64_t seed = 0;
};

/// Constructs backbone + linear head feature_dim -> num_classes and applies
/// the regime. Throws RegistryError / ConstructionError / LoadError.
ModelHandle build_model(const ModelSpec& spec, const BuildOptions& options = {});

std::shared_ptr<Backbone> make_backbone(BackboneName name);

ModelHandle build_siamese(const SiameseSpec& spec, const BuildOptions& options = {});

/// Eval/train mode is the caller's business; shapes must agree.
torch::Tensor dual_forward(ModelHandle& model, const torch::Tensor& left, const torch::Tensor& right);
torch::Tensor single_forward(ModelHandle& model, const torch::Tensor& images);

void apply_regime(ModelHandle& model, Regime regime);

std::int64_t count_trainable_params(const ModelHandle& model);
std::int64_t count_total_params(const ModelHandle& model);

/// Every parameter and buffer by qualified name.
std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module);

/// Copies tensors by name into `module`. Entries missing from `state` raise
/// LoadError when `strict`; shape mismatches always do.
void load_named_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state, bool strict,
                      const std::string& context);

/// Flat named-tensor archive (a pickled dict name -> tensor, readable by
/// Python's torch.load). Names are module-qualified, e.g.
/// "backbone.features.0.0.weight", "head.weight", "projection.bias".
void export_weights(const ModelHandle& model, const std::filesystem::path& path);
std::map<std::string, torch::Tensor> read_weights(const std::filesystem::path& path);

/// Copies the backbone weights of `from` into `to` (e.g. distilled student
/// into a Siamese extractor). Architectures must match.
void copy_backbone_weights(const ModelHandle& from, ModelHandle& to);

} // namespace cataract::models
