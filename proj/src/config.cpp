#include "cataract/config.hpp"

#include <cstdlib>
#include <fstream>

#include "cataract/errors.hpp"

namespace cataract::cli {

json default_config() {
    return json{
        {"seed", 0},
        {"output_dir", "runs/default"},
        {"data", {{"metadata_csv", ""}, {"image_root", ""}, {"manifest_dir", ""}, {"split_ratio", 0.8}}},
        {"model",
         {{"backbone", "mobilenet_v2"}, {"regime", "full_finetune"}, {"pretrained", false}, {"pretrained_weights", ""}}},
        {"siamese",
         {{"backbone", "mobilenet_v2"},
          {"regime", "full_finetune"},
          {"projection_dim", 128},
          {"hidden_dim", 64},
          {"projection_dropout", 0.3},
          {"classifier_dropout", 0.3},
          {"init_from", ""}}},
        {"train",
         {{"batch_size", 16},
          {"learning_rate", 1e-4},
          {"weight_decay", 1e-5},
          {"label_smoothing", 0.1},
          {"scheduler", {{"factor", 0.5}, {"patience_epochs", 2}}},
          {"early_stop_patience", 5},
          {"max_epochs", 50},
          {"balance_classes", false},
          {"bn_recalibration_batches", 32},
          {"augment", true}}},
        {"distill",
         {{"temperature", 2.0},
          {"alpha", 0.7},
          {"kl_direction", "teacher_to_student"},
          {"hard_label_smoothing", 0.1},
          {"teacher_checkpoint", ""}}},
        {"synth",
         {{"image_size", 224},
          {"n_normal", 100},
          {"n_cataract", 100},
          {"cataract_blur_sigma", 4.0},
          {"opacity_strength", 0.5},
          {"vessel_count_range", {6, 12}}}},
        {"evaluate", {{"checkpoints", json::array()}, {"batch_size", 16}}},
        {"explain",
         {{"checkpoint", ""}, {"layer", ""}, {"target_class", 1}, {"opacity", 0.4}, {"max_images", 8}}},
        {"benchmark",
         {{"backbones", {"mobilenet_v2"}}, {"regimes", {"full_finetune", "frozen_backbone"}}}},
    };
}

namespace {

bool same_kind(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) {
        return true;
    }
    return a.type() == b.type();
}

const char* kind_name(const json& j) {
    return j.is_number() ? "number" : j.type_name();
}

std::string join_path(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

} // namespace

void merge_config(json& base, const json& patch, const std::string& prefix) {
    if (!patch.is_object()) {
        throw SchemaError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    }
    for (const auto& [key, value] : patch.items()) {
        const auto path = join_path(prefix, key);
        if (!base.contains(key)) {
            throw SchemaError(path + ": unknown key");
        }
        auto& slot = base[key];
        if (slot.is_object()) {
            merge_config(slot, value, path);
        } else if (!same_kind(slot, value)) {
            throw SchemaError(path + ": expected " + kind_name(slot) + ", got " + kind_name(value));
        } else {
            slot = value;
        }
    }
}

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw SchemaError("override '" + assignment + "' is not of the form key=value");
    }
    const auto key = assignment.substr(0, eq);
    const auto text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) {
        value = text;
    }
    // Build the nested patch {"a": {"b": value}} and merge it.
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t start = 0;;) {
        const auto dot = rest.find('.', start);
        parts.push_back(rest.substr(start, dot - start));
        if (dot == std::string::npos) {
            break;
        }
        start = dot + 1;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        patch = json{{*it, patch}};
    }
    // A string default given something that parsed as a number stays a string.
    const json* slot = &config;
    for (const auto& p : parts) {
        if (!slot->is_object() || !slot->contains(p)) {
            slot = nullptr;
            break;
        }
        slot = &(*slot)[p];
    }
    if (slot && slot->is_string() && !value.is_string()) {
        json* leaf = &patch;
        for (const auto& p : parts) {
            leaf = &(*leaf)[p];
        }
        *leaf = text;
    }
    merge_config(config, patch);
}

namespace {

/// Reads a leaf, turning any failure into a SchemaError naming the field.
template <typename F>
auto field(const std::string& path, F&& read) {
    try {
        return read();
    } catch (const SchemaError&) {
        throw;
    } catch (const std::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
}

const json& at_path(const json& root, const std::string& path) {
    const json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        node = &node->at(path.substr(start, dot - start));
        if (dot == std::string::npos) {
            return *node;
        }
        start = dot + 1;
    }
}

template <typename T>
T get(const json& root, const std::string& path) {
    return field(path, [&] { return at_path(root, path).get<T>(); });
}

std::size_t get_count(const json& root, const std::string& path) {
    return field(path, [&] {
        const auto v = at_path(root, path).get<double>();
        if (v < 0 || v != static_cast<double>(static_cast<std::int64_t>(v))) {
            throw SchemaError(path + ": expected a non-negative integer");
        }
        return static_cast<std::size_t>(v);
    });
}

/// Runs a section validator. Its messages open with the offending field name,
/// which is turned into the full dotted path.
template <typename F>
void check(const std::string& section, F&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        const auto end = msg.find_first_not_of("abcdefghijklmnopqrstuvwxyz_.");
        if (end == 0 || end == std::string::npos) {
            throw SchemaError(section + ": " + msg);
        }
        const auto rest = msg.substr(end);
        const auto body = rest.rfind(": ", 0) == 0 ? rest.substr(2) : msg;
        throw SchemaError(section + "." + msg.substr(0, end) + ": " + body);
    }
}

} // namespace

ExperimentConfig interpret(const json& r) {
    ExperimentConfig c;
    c.resolved = r;
    c.seed = get_count(r, "seed");
    c.output_dir = get<std::string>(r, "output_dir");
    if (c.output_dir.empty()) {
        throw SchemaError("output_dir: must not be empty");
    }

    c.data.metadata_csv = get<std::string>(r, "data.metadata_csv");
    c.data.image_root = get<std::string>(r, "data.image_root");
    c.data.manifest_dir = get<std::string>(r, "data.manifest_dir");
    if (c.data.manifest_dir.empty()) {
        c.data.manifest_dir = c.output_dir / "manifests";
    }
    c.data.split_ratio = get<double>(r, "data.split_ratio");
    if (!(c.data.split_ratio > 0 && c.data.split_ratio < 1)) {
        throw SchemaError("data.split_ratio: must lie in (0, 1)");
    }

    c.model = field("model.backbone", [&] {
        return models::ModelSpec::of(models::parse_backbone(get<std::string>(r, "model.backbone")));
    });
    c.model.regime = field("model.regime", [&] { return models::parse_regime(get<std::string>(r, "model.regime")); });
    c.build.pretrained = get<bool>(r, "model.pretrained");
    c.build.pretrained_weights = get<std::string>(r, "model.pretrained_weights");
    c.build.seed = c.seed;

    c.siamese.backbone = field("siamese.backbone", [&] {
        return models::ModelSpec::of(models::parse_backbone(get<std::string>(r, "siamese.backbone")));
    });
    c.siamese.backbone.regime =
        field("siamese.regime", [&] { return models::parse_regime(get<std::string>(r, "siamese.regime")); });
    c.siamese.projection_dim = static_cast<std::int64_t>(get_count(r, "siamese.projection_dim"));
    c.siamese.hidden_dim = static_cast<std::int64_t>(get_count(r, "siamese.hidden_dim"));
    c.siamese.projection_dropout = get<double>(r, "siamese.projection_dropout");
    c.siamese.classifier_dropout = get<double>(r, "siamese.classifier_dropout");
    c.siamese_init = get<std::string>(r, "siamese.init_from");

    auto& t = c.train;
    t.batch_size = static_cast<std::int64_t>(get_count(r, "train.batch_size"));
    t.learning_rate = get<double>(r, "train.learning_rate");
    t.weight_decay = get<double>(r, "train.weight_decay");
    t.label_smoothing = get<double>(r, "train.label_smoothing");
    t.scheduler.factor = get<double>(r, "train.scheduler.factor");
    t.scheduler.patience_epochs = static_cast<int>(get_count(r, "train.scheduler.patience_epochs"));
    t.early_stop_patience = static_cast<int>(get_count(r, "train.early_stop_patience"));
    t.max_epochs = static_cast<int>(get_count(r, "train.max_epochs"));
    t.balance_classes = get<bool>(r, "train.balance_classes");
    t.bn_recalibration_batches = static_cast<int>(get_count(r, "train.bn_recalibration_batches"));
    t.augment = get<bool>(r, "train.augment");
    t.seed = c.seed;
    try {
        t.validate();
    } catch (const ConfigError& e) {
        throw SchemaError(std::string("train.") + e.what());
    }

    c.kd.temperature = get<double>(r, "distill.temperature");
    c.kd.alpha = get<double>(r, "distill.alpha");
    c.kd.kl_direction = field("distill.kl_direction", [&] {
        return distillation::parse_kl_direction(get<std::string>(r, "distill.kl_direction"));
    });
    c.kd.hard_label_smoothing = get<double>(r, "distill.hard_label_smoothing");
    check("distill", [&] { c.kd.validate(); });
    c.teacher_checkpoint = get<std::string>(r, "distill.teacher_checkpoint");

    auto& s = c.synth;
    s.image_size = static_cast<int>(get_count(r, "synth.image_size"));
    s.n_normal = get_count(r, "synth.n_normal");
    s.n_cataract = get_count(r, "synth.n_cataract");
    s.cataract_blur_sigma = get<double>(r, "synth.cataract_blur_sigma");
    s.opacity_strength = get<double>(r, "synth.opacity_strength");
    s.vessel_count_range = get<std::pair<int, int>>(r, "synth.vessel_count_range");
    s.seed = c.seed;
    check("synth", [&] { s.validate(); });

    for (const auto& p : get<std::vector<std::string>>(r, "evaluate.checkpoints")) {
        c.evaluate.checkpoints.emplace_back(p);
    }
    c.evaluate.batch_size = get_count(r, "evaluate.batch_size");
    if (c.evaluate.batch_size == 0) {
        throw SchemaError("evaluate.batch_size: must be positive");
    }

    c.explain.checkpoint = get<std::string>(r, "explain.checkpoint");
    c.explain.layer = get<std::string>(r, "explain.layer");
    c.explain.target_class = static_cast<int>(get_count(r, "explain.target_class"));
    if (c.explain.target_class > 1) {
        throw SchemaError("explain.target_class: must be 0 or 1");
    }
    c.explain.opacity = get<double>(r, "explain.opacity");
    if (!(c.explain.opacity >= 0 && c.explain.opacity <= 1)) {
        throw SchemaError("explain.opacity: must lie in [0, 1]");
    }
    c.explain.max_images = get_count(r, "explain.max_images");

    for (const auto& b : get<std::vector<std::string>>(r, "benchmark.backbones")) {
        c.benchmark.backbones.push_back(field("benchmark.backbones", [&] { return models::parse_backbone(b); }));
    }
    for (const auto& g : get<std::vector<std::string>>(r, "benchmark.regimes")) {
        c.benchmark.regimes.push_back(field("benchmark.regimes", [&] { return models::parse_regime(g); }));
    }
    return c;
}

ExperimentConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json cfg = default_config();
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) {
            throw ConfigError("cannot open config file: " + file.string());
        }
        json user = json::parse(in, nullptr, /*allow_exceptions=*/false, /*ignore_comments=*/true);
        if (user.is_discarded()) {
            throw ConfigError("config file is not valid JSON: " + file.string());
        }
        merge_config(cfg, user);
    }
    for (const auto& o : overrides) {
        apply_override(cfg, o);
    }
    if (const char* root = std::getenv(kImageRootEnv); root && *root) {
        cfg["data"]["image_root"] = root;
    }
    return interpret(cfg);
}

} // namespace cataract::cli
