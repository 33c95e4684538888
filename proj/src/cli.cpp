#include "cataract/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "cataract/checkpoint.hpp"
#include "cataract/config.hpp"
#include "cataract/csv.hpp"
#include "cataract/dataset.hpp"
#include "cataract/errors.hpp"
#include "cataract/evaluation.hpp"
#include "cataract/explain.hpp"
#include "cataract/image.hpp"

namespace cataract::cli {

namespace fs = std::filesystem;

namespace {

/// Configuration problems found after parsing (missing inputs and the like).
struct UsageError : ConfigError {
    using ConfigError::ConfigError;
};

class Log {
public:
    explicit Log(std::string command) : command_(std::move(command)) {}

    /// "[command] event key=value key=value"
    void operator()(const std::string& event, const std::vector<std::pair<std::string, std::string>>& kv = {}) const {
        std::ostringstream line;
        line << '[' << command_ << "] " << event;
        for (const auto& [k, v] : kv) {
            line << ' ' << k << '=' << v;
        }
        std::cout << line.str() << std::endl;
    }

private:
    std::string command_;
};

std::string num(double v, int digits = 6) {
    std::ostringstream s;
    s << std::setprecision(digits) << v;
    return s.str();
}

fs::path image_root(const ExperimentConfig& c) {
    if (!c.data.image_root.empty()) {
        return c.data.image_root;
    }
    if (!c.data.metadata_csv.empty()) {
        const auto dir = c.data.metadata_csv.parent_path();
        return fs::is_directory(dir / "images") ? dir / "images" : dir;
    }
    throw UsageError("data.image_root: required (or set data.metadata_csv, or " + std::string(kImageRootEnv) + ")");
}

fs::path require_file(const fs::path& p, const std::string& field) {
    if (p.empty()) {
        throw UsageError(field + ": required");
    }
    if (!fs::is_regular_file(p)) {
        throw UsageError(field + ": file not found: " + p.string());
    }
    return p;
}

training::LoaderOptions loader_options() {
    return {};
}

std::unique_ptr<training::SingleEyeDataset> single_split(const ExperimentConfig& c, const std::string& name) {
    const auto manifest = require_file(c.data.manifest_dir / (name + ".csv"), "data.manifest_dir");
    return std::make_unique<training::SingleEyeDataset>(data::read_sample_manifest(manifest), image_root(c),
                                                        loader_options());
}

std::unique_ptr<training::DualEyeDataset> pair_split(const ExperimentConfig& c, const std::string& name) {
    const auto manifest = require_file(c.data.manifest_dir / ("pairs_" + name + ".csv"), "data.manifest_dir");
    return std::make_unique<training::DualEyeDataset>(data::read_pair_manifest(manifest), image_root(c),
                                                      loader_options());
}

training::TrainHooks epoch_logging(const Log& log, const std::string& tag) {
    training::TrainHooks hooks;
    hooks.on_epoch = [log, tag](const training::EpochRecord& r) {
        log("epoch", {{"model", tag},
                      {"epoch", std::to_string(r.epoch)},
                      {"train_loss", num(r.train_loss)},
                      {"val_loss", num(r.val_loss)},
                      {"val_acc", num(r.val_accuracy)},
                      {"val_f1", num(r.val_f1)},
                      {"lr", num(r.lr)}});
    };
    return hooks;
}

/// Trains (or distils) into <output>/models/<tag>/ and reports the outcome.
training::TrainResult fit(const ExperimentConfig& c, const Log& log, models::ModelHandle& model,
                          const training::ImageDataset& train_set, const training::ImageDataset& val_set,
                          const std::string& tag, models::ModelHandle* teacher = nullptr) {
    const auto dir = c.output_dir / "models" / tag;
    fs::create_directories(dir);
    auto hooks = epoch_logging(log, tag);
    hooks.checkpoint_path = dir / "best.ckpt";
    hooks.config_hash = models::config_hash(c.resolved);
    log("start", {{"model", tag},
                  {"train", std::to_string(train_set.size())},
                  {"val", std::to_string(val_set.size())},
                  {"trainable_params", std::to_string(models::count_trainable_params(model))}});
    const auto result = teacher ? distillation::distill_train(*teacher, model, train_set, val_set, c.kd, c.train, hooks)
                                : training::train(model, train_set, val_set, c.train, hooks);
    training::write_history_csv(dir / "history.csv", result.history);
    models::export_weights(model, dir / "weights.pt");
    log("done", {{"model", tag},
                 {"best_epoch", std::to_string(result.best_epoch)},
                 {"best_val_acc", num(result.best_val_accuracy)},
                 {"stopped_early", result.stopped_early ? "true" : "false"},
                 {"checkpoint", result.best_checkpoint.string()}});
    return result;
}

std::string regime_tag(const models::ModelHandle& m) {
    return m.name() + "_" + std::string(models::to_string(m.spec.regime));
}

// --- subcommands ---------------------------------------------------------------

void cmd_synth(const ExperimentConfig& c, const Log& log) {
    const auto out = synth::generate_dataset(c.synth, c.output_dir);
    log("done", {{"images", std::to_string(out.images_written)},
                 {"samples", std::to_string(out.samples.size())},
                 {"pairs", std::to_string(out.pairs.size())},
                 {"metadata", out.metadata_csv.string()}});
}

void cmd_prepare(const ExperimentConfig& c, const Log& log) {
    const auto csv_path = require_file(c.data.metadata_csv, "data.metadata_csv");
    const auto load = data::load_metadata(csv_path);
    std::vector<data::DroppedEye> dropped;
    const auto samples = data::filter_binary(load.records, &dropped);
    std::vector<data::DroppedEye> dropped_pairs;
    const auto pairs = data::build_dual_eye_samples(load.records, &dropped_pairs);
    dropped.insert(dropped.end(), dropped_pairs.begin(), dropped_pairs.end());

    const auto split = data::stratified_split(samples, c.data.split_ratio, c.seed);
    const auto& dir = c.data.manifest_dir;
    data::write_sample_manifest(dir / "train.csv", split.train);
    data::write_sample_manifest(dir / "val.csv", split.validation);
    data::write_rejects(dir / "rejects.csv", load.rejects, dropped);
    const auto counts = data::class_distribution(samples);
    log("single_eye", {{"normal", std::to_string(counts.normal)},
                       {"cataract", std::to_string(counts.cataract)},
                       {"train", std::to_string(split.train.size())},
                       {"val", std::to_string(split.validation.size())}});
    try {
        const auto pair_split = data::stratified_split(pairs, c.data.split_ratio, c.seed);
        data::write_pair_manifest(dir / "pairs_train.csv", pair_split.train);
        data::write_pair_manifest(dir / "pairs_val.csv", pair_split.validation);
        log("dual_eye", {{"pairs", std::to_string(pairs.size())},
                         {"train", std::to_string(pair_split.train.size())},
                         {"val", std::to_string(pair_split.validation.size())}});
    } catch (const StratificationError& e) {
        log("dual_eye_skipped", {{"reason", '"' + std::string(e.what()) + '"'}});
    }
    log("done", {{"rows", std::to_string(load.records.size() + load.rejects.size())},
                 {"rejects", std::to_string(load.rejects.size())},
                 {"dropped_eyes", std::to_string(dropped.size())},
                 {"manifests", dir.string()}});
}

void cmd_train(const ExperimentConfig& c, const Log& log) {
    const auto train_set = single_split(c, "train");
    const auto val_set = single_split(c, "val");
    auto model = models::build_model(c.model, c.build);
    fit(c, log, model, *train_set, *val_set, regime_tag(model));
}

void cmd_distill(const ExperimentConfig& c, const Log& log) {
    const auto teacher_path = require_file(c.teacher_checkpoint, "distill.teacher_checkpoint");
    auto teacher = models::load_checkpoint(teacher_path);
    if (teacher.is_dual()) {
        throw LoadError("teacher checkpoint holds a dual-eye model; a single-eye teacher is required");
    }
    const auto train_set = single_split(c, "train");
    const auto val_set = single_split(c, "val");
    auto student = models::build_model(c.model, c.build);
    log("teacher", {{"model", regime_tag(teacher)}, {"checkpoint", teacher_path.string()}});
    fit(c, log, student, *train_set, *val_set, student.name() + "_distilled", &teacher);
}

void cmd_train_dual(const ExperimentConfig& c, const Log& log) {
    const auto train_set = pair_split(c, "train");
    const auto val_set = pair_split(c, "val");
    auto model = models::build_siamese(c.siamese, c.build);
    if (!c.siamese_init.empty()) {
        auto init = models::load_checkpoint(require_file(c.siamese_init, "siamese.init_from"));
        models::copy_backbone_weights(init, model);
        log("init", {{"from", c.siamese_init.string()}});
    }
    fit(c, log, model, *train_set, *val_set, model.name());
}

void cmd_evaluate(const ExperimentConfig& c, const Log& log) {
    if (c.evaluate.checkpoints.empty()) {
        throw UsageError("evaluate.checkpoints: at least one checkpoint is required");
    }
    std::vector<evaluation::MetricsRow> rows;
    std::vector<std::pair<std::string, evaluation::RocCurve>> curves;
    for (const auto& path : c.evaluate.checkpoints) {
        auto model = models::load_checkpoint(require_file(path, "evaluate.checkpoints"));
        const std::string tag = path.parent_path().filename().string().empty() ? regime_tag(model)
                                                                               : path.parent_path().filename().string();
        std::unique_ptr<training::ImageDataset> data;
        if (model.is_dual()) {
            data = pair_split(c, "val");
        } else {
            data = single_split(c, "val");
        }
        const auto pred = evaluation::predict(model, *data, c.evaluate.batch_size);
        const auto rep = evaluation::report(pred);
        rows.push_back({tag, std::string(models::to_string(model.spec.regime)), rep,
                        models::count_trainable_params(model)});
        evaluation::write_predictions_csv(c.output_dir / ("predictions_" + tag + ".csv"), pred);
        if (rep.roc) {
            evaluation::write_roc_csv(c.output_dir / ("roc_" + tag + ".csv"), *rep.roc);
            evaluation::plot_roc_png(c.output_dir / ("roc_" + tag + ".png"), {{tag, *rep.roc}});
            curves.emplace_back(tag, *rep.roc);
        }
        log("metrics", {{"model", tag},
                        {"accuracy", num(rep.accuracy)},
                        {"f1", num(rep.f1)},
                        {"auc", num(rep.auc())},
                        {"acc_f1", '"' + evaluation::format_pair(rep.accuracy, rep.f1) + '"'}});
    }
    evaluation::write_metrics_csv(c.output_dir / "metrics.csv", rows);
    if (curves.size() > 1) {
        evaluation::plot_roc_png(c.output_dir / "roc_all.png", curves);
    }
}

void cmd_explain(const ExperimentConfig& c, const Log& log) {
    const auto ckpt = require_file(c.explain.checkpoint, "explain.checkpoint");
    models::CheckpointMeta meta;
    auto model = models::load_checkpoint(ckpt, &meta);
    const std::string tag = ckpt.parent_path().filename().string().empty() ? regime_tag(model)
                                                                            : ckpt.parent_path().filename().string();
    const auto val = single_split(c, "val");
    const auto dir = c.output_dir / "explain";
    fs::create_directories(dir);
    std::optional<std::string> layer;
    if (!c.explain.layer.empty()) {
        layer = c.explain.layer;
    }
    std::vector<csv::Row> summary;
    const auto n = std::min(c.explain.max_images, val->size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = val->samples()[i];
        const auto b = val->batch({i}, std::nullopt);
        const auto heat = explain::grad_cam(model, b.left[0], layer, c.explain.target_class);
        const auto display = preprocess::to_display_image(b.left[0], meta.stats);
        const auto stem = s.sample_id + "_" + tag + "_" + std::to_string(c.explain.target_class);
        write_png(dir / (stem + ".png"), explain::overlay(display, heat.values, c.explain.opacity));
        explain::write_heatmap_csv(dir / (stem + ".csv"), heat.values);
        const auto mass = explain::region_mass(heat.values, 0.25);
        summary.push_back({s.sample_id, std::to_string(static_cast<int>(s.label)), heat.source_layer,
                           csv::fmt(mass.inside), csv::fmt(mass.outside)});
    }
    csv::write_file(dir / ("summary_" + tag + ".csv"), {"id", "label", "layer", "center_mean", "outer_mean"}, summary);
    log("done", {{"model", tag}, {"images", std::to_string(n)}, {"dir", dir.string()}});
}

void cmd_benchmark(const ExperimentConfig& c, const Log& log) {
    const auto train_set = single_split(c, "train");
    const auto val_set = single_split(c, "val");
    std::map<std::pair<std::string, models::Regime>, evaluation::MetricsReport> results;
    std::vector<evaluation::MetricsRow> rows;
    for (const auto backbone : c.benchmark.backbones) {
        for (const auto regime : c.benchmark.regimes) {
            auto model = models::build_model(models::ModelSpec::of(backbone, regime), c.build);
            const auto tag = regime_tag(model);
            fit(c, log, model, *train_set, *val_set, tag);
            const auto rep = evaluation::evaluate(model, *val_set, static_cast<std::size_t>(c.train.batch_size));
            results[{model.name(), regime}] = rep;
            rows.push_back({model.name(), std::string(models::to_string(regime)), rep,
                            models::count_trainable_params(model)});
        }
    }
    const auto table = evaluation::compare_regimes(results);
    const auto dir = c.output_dir / "benchmark";
    evaluation::write_metrics_csv(dir / "metrics.csv", rows);
    table.write_csv(dir / "ablation.csv");
    table.plot_png(dir / "ablation.png");
    {
        std::ofstream txt(dir / "ablation.txt", std::ios::trunc);
        txt << table.render();
    }
    std::cout << table.render();
    log("done", {{"rows", std::to_string(table.rows.size())}, {"table", (dir / "ablation.csv").string()}});
}

using Handler = void (*)(const ExperimentConfig&, const Log&);

struct Command {
    const char* name;
    const char* help;
    Handler handler;
};

constexpr Command kCommands[] = {
    {"synth", "Generate a synthetic fundus dataset (images + ODIR-layout CSV)", cmd_synth},
    {"prepare-data", "Ingest metadata, keep binary labels, split, write manifests", cmd_prepare},
    {"train", "Train a single-eye classifier", cmd_train},
    {"distill", "Distil a trained teacher checkpoint into a student", cmd_distill},
    {"train-dual", "Train the dual-eye Siamese classifier", cmd_train_dual},
    {"evaluate", "Metrics, ROC curves and predictions for checkpoints", cmd_evaluate},
    {"explain", "Grad-CAM overlays and heatmap grids", cmd_explain},
    {"benchmark", "Full fine-tune vs frozen backbone ablation", cmd_benchmark},
};

int report_error(const std::string& category, const std::string& message, int code) {
    std::cerr << "error[" << category << "] " << message << std::endl;
    return code;
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Cataract detection from fundus photographs"};
    app.require_subcommand(1, 1);
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string output_dir;
    bool overwrite = false;
    for (const auto& cmd : kCommands) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", config_path, "JSON experiment config");
        sub->add_option("--set", sets, "Override a leaf: dotted.key=value (repeatable)");
        sub->add_option("--seed", seed, "Seed for every random choice");
        sub->add_option("--output-dir", output_dir, "Directory for all artifacts");
        sub->add_flag("--overwrite", overwrite, "Allow re-running into an existing output directory");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const Command* command = nullptr;
    for (const auto& cmd : kCommands) {
        if (name == cmd.name) {
            command = &cmd;
        }
    }
    Log log(name);

    ExperimentConfig config;
    try {
        if (seed) {
            sets.push_back("seed=" + std::to_string(*seed));
        }
        if (!output_dir.empty()) {
            sets.push_back("output_dir=" + nlohmann::json(output_dir).dump());
        }
        config = resolve_config(config_path, sets);
        const auto snapshot = config.output_dir / (name + ".config.json");
        if (fs::exists(snapshot) && !overwrite) {
            throw ConfigError("output directory already holds a '" + name + "' run (" + snapshot.string() +
                              "); pass --overwrite to replace it");
        }
        fs::create_directories(config.output_dir);
        std::ofstream(snapshot, std::ios::trunc) << config.resolved.dump(2) << '\n';
    } catch (const Error& e) {
        return report_error(e.category(), e.what(), kExitConfig);
    } catch (const std::exception& e) {
        return report_error("config", e.what(), kExitConfig);
    }

    torch::manual_seed(config.seed);
    const auto started = std::chrono::steady_clock::now();
    try {
        command->handler(config, log);
    } catch (const UsageError& e) {
        return report_error(e.category(), e.what(), kExitConfig);
    } catch (const DivergenceError& e) {
        return report_error(e.category(), "epoch " + std::to_string(e.epoch()) + ": " + e.what(), kExitRuntime);
    } catch (const Error& e) {
        return report_error(e.category(), e.what(), kExitRuntime);
    } catch (const c10::Error& e) {
        return report_error("torch", e.what_without_backtrace(), kExitRuntime);
    } catch (const std::exception& e) {
        return report_error("runtime", e.what(), kExitRuntime);
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    log("exit", {{"status", "0"}, {"seconds", num(elapsed.count(), 4)}});
    return kExitOk;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"cataract"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace cataract::cli
