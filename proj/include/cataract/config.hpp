#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cataract/distillation.hpp"
#include "cataract/modelzoo.hpp"
#include "cataract/synthdata.hpp"
#include "cataract/training.hpp"

namespace cataract::cli {

using nlohmann::json;

/// Environment variable that, when set, replaces data.image_root.
inline constexpr const char* kImageRootEnv = "FUNDUS_IMAGE_ROOT";

struct DataConfig {
    std::filesystem::path metadata_csv;
    std::filesystem::path image_root;
    /// Where prepare-data writes and the training commands read manifests.
    std::filesystem::path manifest_dir;
    double split_ratio = 0.8;
};

struct EvaluateConfig {
    std::vector<std::filesystem::path> checkpoints;
    std::size_t batch_size = 16;
};

struct ExplainConfig {
    std::filesystem::path checkpoint;
    std::string layer; // empty: final feature map
    int target_class = 1;
    double opacity = 0.4;
    std::size_t max_images = 8;
};

struct BenchmarkConfig {
    std::vector<models::BackboneName> backbones;
    std::vector<models::Regime> regimes;
};

/// Typed view of a fully resolved configuration document.
struct ExperimentConfig {
    json resolved;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    DataConfig data;
    models::ModelSpec model;
    models::BuildOptions build;
    models::SiameseSpec siamese;
    /// Optional single-eye checkpoint whose backbone seeds the Siamese extractor.
    std::filesystem::path siamese_init;
    training::TrainConfig train;
    distillation::KDConfig kd;
    std::filesystem::path teacher_checkpoint;
    synth::SynthSpec synth;
    EvaluateConfig evaluate;
    ExplainConfig explain;
    BenchmarkConfig benchmark;
};

/// Every key with its default value. This is also the schema: keys absent
/// here are rejected.
json default_config();

/// Recursively overlays `patch` onto `base`. Throws SchemaError naming the
/// dotted path of an unknown key or a value whose JSON type differs from the
/// default's.
void merge_config(json& base, const json& patch, const std::string& prefix = "");

/// Applies "dotted.key=value". The value is read as JSON when it parses
/// (numbers, booleans, arrays) and as a plain string otherwise.
void apply_override(json& config, const std::string& assignment);

/// Builds the typed view; semantic problems raise SchemaError naming the field.
ExperimentConfig interpret(const json& resolved);

/// Defaults <- file (if any) <- overrides, then interpret. The environment
/// image-root override is applied last.
ExperimentConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

} // namespace cataract::cli
