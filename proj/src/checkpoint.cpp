#include "cataract/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include <torch/torch.h>

#include "cataract/errors.hpp"

namespace cataract::models {

namespace {

constexpr const char* kFormat = "fundus-checkpoint/1";

c10::IValue read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw LoadError("cannot open checkpoint: " + path.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        auto v = torch::pickle_load(bytes);
        if (!v.isGenericDict()) {
            throw LoadError("checkpoint is not a dictionary: " + path.string());
        }
        return v;
    } catch (const c10::Error& e) {
        throw LoadError("cannot parse checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
}

c10::IValue lookup(const c10::IValue& archive, const std::string& key, const std::filesystem::path& path) {
    const auto dict = archive.toGenericDict();
    const auto it = dict.find(key);
    if (it == dict.end()) {
        throw LoadError("checkpoint lacks '" + key + "': " + path.string());
    }
    return it->value();
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kFormat) {
        throw LoadError("unrecognized checkpoint format '" + j.value("format", "") + "'");
    }
    CheckpointMeta m;
    m.spec = model_spec_from_json(j.at("model"));
    if (!j.at("siamese").is_null()) {
        m.siamese = siamese_spec_from_json(j.at("siamese"));
    }
    const auto& n = j.at("normalization");
    m.stats = {n.at("mean").get<std::array<double, 3>>(), n.at("std").get<std::array<double, 3>>()};
    m.config_hash = j.value("config_hash", "");
    m.epoch = j.value("epoch", 0);
    return m;
}

} // namespace

nlohmann::json to_json(const ModelSpec& spec) {
    return {{"backbone", std::string(to_string(spec.backbone))},
            {"regime", std::string(to_string(spec.regime))},
            {"num_classes", spec.num_classes},
            {"feature_dim", spec.feature_dim}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec spec = ModelSpec::of(parse_backbone(j.at("backbone").get<std::string>()),
                                   parse_regime(j.value("regime", std::string("full_finetune"))));
    spec.num_classes = j.value("num_classes", spec.num_classes);
    spec.feature_dim = j.value("feature_dim", spec.feature_dim);
    return spec;
}

nlohmann::json to_json(const SiameseSpec& spec) {
    return {{"backbone", to_json(spec.backbone)},
            {"projection_dim", spec.projection_dim},
            {"hidden_dim", spec.hidden_dim},
            {"projection_dropout", spec.projection_dropout},
            {"classifier_dropout", spec.classifier_dropout}};
}

SiameseSpec siamese_spec_from_json(const nlohmann::json& j) {
    SiameseSpec s;
    if (j.contains("backbone")) {
        s.backbone = model_spec_from_json(j.at("backbone"));
    }
    s.projection_dim = j.value("projection_dim", s.projection_dim);
    s.hidden_dim = j.value("hidden_dim", s.hidden_dim);
    s.projection_dropout = j.value("projection_dropout", s.projection_dropout);
    s.classifier_dropout = j.value("classifier_dropout", s.classifier_dropout);
    return s;
}

std::string config_hash(const nlohmann::json& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : config.dump()) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_checkpoint(const std::filesystem::path& path, const ModelHandle& model, const CheckpointMeta& meta) {
    const nlohmann::json j = {
        {"format", kFormat},
        {"model", to_json(model.spec)},
        {"siamese", model.siamese ? to_json(*model.siamese) : nlohmann::json(nullptr)},
        {"normalization", {{"mean", meta.stats.mean}, {"std", meta.stats.std}}},
        {"config_hash", meta.config_hash},
        {"epoch", meta.epoch},
    };
    c10::Dict<std::string, torch::Tensor> weights;
    for (const auto& [name, tensor] : named_state(*model.module)) {
        weights.insert(name, tensor.detach().clone());
    }
    c10::impl::GenericDict archive(c10::StringType::get(), c10::AnyType::get());
    archive.insert(c10::IValue(std::string("meta")), c10::IValue(j.dump(2)));
    archive.insert(c10::IValue(std::string("weights")), c10::IValue(weights));
    const auto bytes = torch::pickle_save(c10::IValue(archive));
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    // Write-then-rename keeps a previous checkpoint intact if we die mid-write.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("cannot write checkpoint: " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
    const auto archive = read_archive(path);
    try {
        return meta_from_json(nlohmann::json::parse(lookup(archive, "meta", path).toStringRef()));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
    } catch (const Error& e) {
        if (e.category() == "load") {
            throw;
        }
        throw LoadError("checkpoint " + path.string() + ": " + e.what());
    }
}

ModelHandle load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta_out) {
    const auto meta = read_checkpoint_meta(path);
    ModelHandle model;
    try {
        model = meta.siamese ? build_siamese(*meta.siamese) : build_model(meta.spec);
    } catch (const Error& e) {
        throw LoadError("checkpoint " + path.string() + " describes an unbuildable model: " + e.what());
    }
    std::map<std::string, torch::Tensor> state;
    for (const auto& item : lookup(read_archive(path), "weights", path).toGenericDict()) {
        state[item.key().toStringRef()] = item.value().toTensor();
    }
    load_named_state(*model.module, state, /*strict=*/true, "checkpoint " + path.string());
    if (meta_out) {
        *meta_out = meta;
    }
    return model;
}

} // namespace cataract::models
