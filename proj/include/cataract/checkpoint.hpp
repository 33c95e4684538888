#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cataract/modelzoo.hpp"
#include "cataract/preprocess.hpp"

namespace cataract::models {

/// What a checkpoint records besides the weights.
struct CheckpointMeta {
    ModelSpec spec;
    std::optional<SiameseSpec> siamese;
    preprocess::NormalizationStats stats = preprocess::kImageNetStats;
    /// Hash of the resolved training config that produced the weights.
    std::string config_hash;
    int epoch = 0;
};

/// One pickled archive: {"meta": <json text>, "weights": {name: tensor}}.
/// Python can open it with torch.load.
void save_checkpoint(const std::filesystem::path& path, const ModelHandle& model, const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Rebuilds the model from the stored spec and loads every tensor strictly.
/// Any inconsistency (unknown backbone, head shape, missing tensor) is a
/// LoadError.
ModelHandle load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SiameseSpec& spec);
SiameseSpec siamese_spec_from_json(const nlohmann::json& j);

/// 16 hex digits of FNV-1a over the compact JSON dump (keys are sorted by
/// nlohmann::json, so equal configs hash equally).
std::string config_hash(const nlohmann::json& config);

} // namespace cataract::models
