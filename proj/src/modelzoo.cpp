#include "cataract/modelzoo.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include <torch/torch.h>

#include "cataract/errors.hpp"

namespace cataract::models {

namespace {

struct RegistryEntry {
    BackboneName name;
    std::string_view id;
    std::int64_t feature_dim;
    bool cnn;
};

constexpr RegistryEntry kRegistry[] = {
    {BackboneName::resnet50, "resnet50", 2048, true},
    {BackboneName::densenet121, "densenet121", 1024, true},
    {BackboneName::efficientnet_b0, "efficientnet_b0", 1280, true},
    {BackboneName::vit_tiny, "vit_tiny", 192, false},
    {BackboneName::vit_base, "vit_base", 768, false},
    {BackboneName::swin_base, "swin_base", 1024, false},
    {BackboneName::deit_tiny, "deit_tiny", 192, false},
    {BackboneName::deit_base, "deit_base", 768, false},
    {BackboneName::mobilenet_v2, "mobilenet_v2", 1280, true},
};

const RegistryEntry& entry(BackboneName name) {
    for (const auto& e : kRegistry) {
        if (e.name == name) {
            return e;
        }
    }
    throw RegistryError("backbone enum value outside the registry");
}

void check_batch(const torch::Tensor& x, const char* what) {
    if (!x.defined() || x.dim() != 4 || x.size(1) != 3) {
        throw ShapeError(std::string(what) + " batch must be N x 3 x H x W");
    }
}

torch::nn::Linear make_linear(std::int64_t in, std::int64_t out) {
    torch::nn::Linear layer(in, out);
    torch::NoGradGuard g;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    layer->weight.uniform_(-bound, bound);
    layer->bias.zero_();
    return layer;
}

} // namespace

std::string_view to_string(BackboneName name) {
    return entry(name).id;
}

std::string_view to_string(Regime regime) {
    return regime == Regime::full_finetune ? "full_finetune" : "frozen_backbone";
}

BackboneName parse_backbone(std::string_view name) {
    for (const auto& e : kRegistry) {
        if (e.id == name) {
            return e.name;
        }
    }
    std::string known;
    for (const auto& e : kRegistry) {
        known += (known.empty() ? "" : ", ") + std::string(e.id);
    }
    throw RegistryError("unknown backbone '" + std::string(name) + "' (registered: " + known + ")");
}

Regime parse_regime(std::string_view name) {
    if (name == "full_finetune") {
        return Regime::full_finetune;
    }
    if (name == "frozen_backbone") {
        return Regime::frozen_backbone;
    }
    throw ConfigError("unknown regime '" + std::string(name) + "' (expected full_finetune or frozen_backbone)");
}

const std::vector<BackboneName>& registry() {
    static const std::vector<BackboneName> names = [] {
        std::vector<BackboneName> v;
        for (const auto& e : kRegistry) {
            v.push_back(e.name);
        }
        return v;
    }();
    return names;
}

std::int64_t registry_feature_dim(BackboneName name) {
    return entry(name).feature_dim;
}

bool is_cnn(BackboneName name) {
    return entry(name).cnn;
}

ModelSpec ModelSpec::of(BackboneName backbone, Regime regime) {
    return ModelSpec{backbone, regime, 2, registry_feature_dim(backbone)};
}

// --- classifiers -------------------------------------------------------------

void FundusClassifier::set_backbone_frozen(bool frozen) {
    backbone_frozen_ = frozen;
    for (auto& p : backbone()->parameters()) {
        p.set_requires_grad(!frozen);
    }
    train(is_training());
}

void FundusClassifier::train(bool on) {
    torch::nn::Module::train(on);
    if (backbone_frozen_) {
        backbone()->eval();
    }
}

SingleEyeClassifier::SingleEyeClassifier(std::shared_ptr<Backbone> backbone, std::int64_t num_classes)
    : backbone_(register_module("backbone", std::move(backbone))) {
    head_ = register_module("head", make_linear(backbone_->feature_dim(), num_classes));
}

torch::Tensor SingleEyeClassifier::forward(const torch::Tensor& x) {
    check_batch(x, "input");
    return head_(backbone_->forward(x));
}

torch::Tensor SingleEyeClassifier::logits(const torch::Tensor& left, const torch::Tensor& right) {
    if (right.defined()) {
        throw ShapeError("single-eye model received a second image batch");
    }
    return forward(left);
}

SiameseClassifier::SiameseClassifier(std::shared_ptr<Backbone> backbone, const SiameseSpec& spec)
    : backbone_(register_module("backbone", std::move(backbone))) {
    projection_ = register_module("projection", make_linear(backbone_->feature_dim(), spec.projection_dim));
    projection_dropout_ = register_module("projection_dropout", torch::nn::Dropout(spec.projection_dropout));
    hidden_ = register_module("hidden", make_linear(spec.fused_dim(), spec.hidden_dim));
    classifier_dropout_ = register_module("classifier_dropout", torch::nn::Dropout(spec.classifier_dropout));
    output_ = register_module("output", make_linear(spec.hidden_dim, spec.backbone.num_classes));
}

torch::Tensor SiameseClassifier::embed(const torch::Tensor& x) {
    check_batch(x, "eye");
    return projection_dropout_(torch::relu(projection_(backbone_->forward(x))));
}

torch::Tensor SiameseClassifier::logits(const torch::Tensor& left, const torch::Tensor& right) {
    check_batch(left, "left");
    check_batch(right, "right");
    if (left.size(0) != right.size(0)) {
        throw ShapeError("left and right batches differ in size (" + std::to_string(left.size(0)) + " vs " +
                         std::to_string(right.size(0)) + ")");
    }
    auto fused = torch::cat({embed(left), embed(right)}, 1);
    auto h = classifier_dropout_(torch::relu(hidden_(fused)));
    return output_(h);
}

// --- construction ------------------------------------------------------------

std::string ModelHandle::name() const {
    const std::string base(to_string(spec.backbone));
    return siamese ? "siamese_" + base : base;
}

std::shared_ptr<Backbone> make_backbone(BackboneName name) {
    switch (name) {
    case BackboneName::resnet50:
        return make_resnet50();
    case BackboneName::densenet121:
        return make_densenet121();
    case BackboneName::efficientnet_b0:
        return make_efficientnet_b0();
    case BackboneName::mobilenet_v2:
        return make_mobilenet_v2();
    case BackboneName::vit_tiny:
    case BackboneName::deit_tiny:
        return make_vit({192, 12, 3, 768});
    case BackboneName::vit_base:
    case BackboneName::deit_base:
        return make_vit({768, 12, 12, 3072});
    case BackboneName::swin_base:
        return make_swin({});
    }
    throw RegistryError("backbone enum value outside the registry");
}

namespace {

void validate_spec(const ModelSpec& spec) {
    const auto expected = registry_feature_dim(spec.backbone);
    if (spec.feature_dim != expected) {
        throw ConstructionError("feature_dim " + std::to_string(spec.feature_dim) + " does not match " +
                                std::string(to_string(spec.backbone)) + " (" + std::to_string(expected) + ")");
    }
    if (spec.num_classes != 2) {
        throw ConstructionError("only 2-class heads are supported");
    }
}

void load_pretrained(Backbone& backbone, BackboneName name, const BuildOptions& options) {
    if (!options.pretrained) {
        return;
    }
    if (options.pretrained_weights.empty() || !std::filesystem::is_regular_file(options.pretrained_weights)) {
        throw LoadError("pretrained weights unavailable for " + std::string(to_string(name)) +
                        (options.pretrained_weights.empty() ? std::string(": no weights file configured")
                                                            : ": " + options.pretrained_weights.string()) +
                        " (set pretrained=false to train from random initialization)");
    }
    std::map<std::string, torch::Tensor> stripped;
    for (auto& [key, value] : read_weights(options.pretrained_weights)) {
        constexpr std::string_view prefix = "backbone.";
        stripped[key.starts_with(prefix) ? key.substr(prefix.size()) : key] = value;
    }
    load_named_state(backbone, stripped, /*strict=*/true, "pretrained " + std::string(to_string(name)));
}

} // namespace

ModelHandle build_model(const ModelSpec& spec, const BuildOptions& options) {
    validate_spec(spec);
    torch::manual_seed(options.seed);
    auto backbone = make_backbone(spec.backbone);
    load_pretrained(*backbone, spec.backbone, options);
    ModelHandle handle{spec, std::nullopt, std::make_shared<SingleEyeClassifier>(backbone, spec.num_classes)};
    apply_regime(handle, spec.regime);
    return handle;
}

ModelHandle build_siamese(const SiameseSpec& spec, const BuildOptions& options) {
    validate_spec(spec.backbone);
    if (spec.backbone.feature_dim != 1280) {
        throw ConstructionError("Siamese extractor must produce 1280-d features, " +
                                std::string(to_string(spec.backbone.backbone)) + " produces " +
                                std::to_string(spec.backbone.feature_dim));
    }
    if (spec.projection_dim <= 0 || spec.hidden_dim <= 0) {
        throw ConstructionError("projection and hidden dimensions must be positive");
    }
    if (!(spec.projection_dropout >= 0.0 && spec.projection_dropout < 1.0) ||
        !(spec.classifier_dropout >= 0.0 && spec.classifier_dropout < 1.0)) {
        throw ConstructionError("dropout rates must lie in [0, 1)");
    }
    torch::manual_seed(options.seed);
    auto backbone = make_backbone(spec.backbone.backbone);
    load_pretrained(*backbone, spec.backbone.backbone, options);
    ModelHandle handle{spec.backbone, spec, std::make_shared<SiameseClassifier>(backbone, spec)};
    apply_regime(handle, spec.backbone.regime);
    return handle;
}

torch::Tensor dual_forward(ModelHandle& model, const torch::Tensor& left, const torch::Tensor& right) {
    if (!model.is_dual()) {
        throw StateError("dual_forward needs a Siamese model");
    }
    return model.module->logits(left, right);
}

torch::Tensor single_forward(ModelHandle& model, const torch::Tensor& images) {
    if (model.is_dual()) {
        throw StateError("single_forward needs a single-eye model");
    }
    return model.module->logits(images, {});
}

void apply_regime(ModelHandle& model, Regime regime) {
    model.spec.regime = regime;
    if (model.siamese) {
        model.siamese->backbone.regime = regime;
    }
    model.module->set_backbone_frozen(regime == Regime::frozen_backbone);
}

std::int64_t count_trainable_params(const ModelHandle& model) {
    std::int64_t n = 0;
    for (const auto& p : model.module->parameters()) {
        if (p.requires_grad()) {
            n += p.numel();
        }
    }
    return n;
}

std::int64_t count_total_params(const ModelHandle& model) {
    std::int64_t n = 0;
    for (const auto& p : model.module->parameters()) {
        n += p.numel();
    }
    return n;
}

// --- weights -----------------------------------------------------------------

std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& item : module.named_parameters(true)) {
        out[item.key()] = item.value();
    }
    for (const auto& item : module.named_buffers(true)) {
        out[item.key()] = item.value();
    }
    return out;
}

void load_named_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state, bool strict,
                      const std::string& context) {
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& name, torch::Tensor& target) {
        const auto it = state.find(name);
        if (it == state.end()) {
            if (strict) {
                throw LoadError(context + ": missing tensor '" + name + "'");
            }
            return;
        }
        if (it->second.sizes() != target.sizes()) {
            std::ostringstream msg;
            msg << context << ": tensor '" << name << "' has shape " << it->second.sizes() << ", expected "
                << target.sizes();
            throw LoadError(msg.str());
        }
        target.copy_(it->second);
    };
    for (auto& item : module.named_parameters(true)) {
        assign(item.key(), item.value());
    }
    for (auto& item : module.named_buffers(true)) {
        assign(item.key(), item.value());
    }
}

void export_weights(const ModelHandle& model, const std::filesystem::path& path) {
    c10::Dict<std::string, torch::Tensor> dict;
    for (const auto& [name, tensor] : named_state(*model.module)) {
        dict.insert(name, tensor.detach().clone());
    }
    const auto bytes = torch::pickle_save(c10::IValue(dict));
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("cannot write weights: " + path.string());
    }
}

std::map<std::string, torch::Tensor> read_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw LoadError("cannot open weights file: " + path.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    c10::IValue value;
    try {
        value = torch::pickle_load(bytes);
    } catch (const c10::Error& e) {
        throw LoadError("cannot parse weights file " + path.string() + ": " + e.what_without_backtrace());
    }
    if (!value.isGenericDict()) {
        throw LoadError("weights file is not a name -> tensor dictionary: " + path.string());
    }
    std::map<std::string, torch::Tensor> out;
    for (const auto& item : value.toGenericDict()) {
        if (!item.key().isString() || !item.value().isTensor()) {
            throw LoadError("weights file has a non-tensor entry: " + path.string());
        }
        out[item.key().toStringRef()] = item.value().toTensor();
    }
    return out;
}

void copy_backbone_weights(const ModelHandle& from, ModelHandle& to) {
    if (from.spec.backbone != to.spec.backbone) {
        throw LoadError("cannot copy " + std::string(to_string(from.spec.backbone)) + " weights into a " +
                        std::string(to_string(to.spec.backbone)) + " backbone");
    }
    load_named_state(*to.module->backbone(), named_state(*from.module->backbone()), true, "backbone copy");
}

} // namespace cataract::models
