#include "cataract/training.hpp"

#include <cmath>
#include <numeric>

#include <torch/torch.h>

#include "cataract/checkpoint.hpp"
#include "cataract/csv.hpp"
#include "cataract/errors.hpp"
#include "cataract/evaluation.hpp"
#include "cataract/rng.hpp"

namespace cataract::training {

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* field, const std::string& why) {
        if (!ok) {
            throw ConfigError(std::string(field) + ": " + why);
        }
    };
    require(batch_size > 0, "batch_size", "must be positive");
    require(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate", "must be positive");
    require(weight_decay >= 0 && std::isfinite(weight_decay), "weight_decay", "must be non-negative");
    require(label_smoothing >= 0 && label_smoothing < 1, "label_smoothing", "must lie in [0, 1)");
    require(scheduler.factor > 0 && scheduler.factor < 1, "scheduler.factor", "must lie in (0, 1)");
    require(scheduler.patience_epochs > 0, "scheduler.patience_epochs", "must be positive");
    require(early_stop_patience > 0, "early_stop_patience", "must be positive");
    require(max_epochs > 0, "max_epochs", "must be positive");
    require(bn_recalibration_batches >= 0, "bn_recalibration_batches", "must be non-negative");
}

double scheduler_step(SchedulerState& s, double metric) {
    if (metric > s.best) {
        s.best = metric;
        s.bad_steps = 0;
    } else if (++s.bad_steps >= s.patience) {
        s.lr *= s.factor;
        ++s.reductions;
        s.bad_steps = 0;
    }
    return s.lr;
}

bool early_stop_step(EarlyStopState& s, int epoch, double metric) {
    if (metric > s.best) {
        s.best = metric;
        s.best_epoch = epoch;
        s.bad_epochs = 0;
        return false;
    }
    return ++s.bad_epochs >= s.patience;
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels, double smoothing,
                            const torch::Tensor& sample_weights) {
    if (logits.dim() != 2 || labels.dim() != 1 || logits.size(0) != labels.size(0) || logits.size(0) == 0) {
        throw ShapeError("cross_entropy expects N x C logits and N labels");
    }
    if (!(smoothing >= 0 && smoothing < 1)) {
        throw ParameterError("label smoothing must lie in [0, 1)");
    }
    if (!torch::isfinite(logits).all().item<bool>()) {
        throw NumericError("non-finite logits");
    }
    const auto C = logits.size(1);
    if (labels.min().item<std::int64_t>() < 0 || labels.max().item<std::int64_t>() >= C) {
        throw InputError("label outside [0, " + std::to_string(C) + ")");
    }
    const auto logp = torch::log_softmax(logits, 1);
    auto target = torch::full_like(logp, smoothing / static_cast<double>(C));
    target.scatter_add_(1, labels.unsqueeze(1),
                        torch::full({labels.size(0), 1}, 1.0 - smoothing, logp.options()));
    const auto per_sample = -(target * logp).sum(1);
    if (sample_weights.defined()) {
        const auto w = sample_weights.to(per_sample.dtype());
        return (w * per_sample).sum() / w.sum();
    }
    return per_sample.mean();
}

void recalibrate_batchnorm(models::ModelHandle& model, const ImageDataset& data, std::size_t batch_size, int batches,
                           std::uint64_t seed) {
    std::vector<torch::nn::BatchNorm2dImpl*> layers;
    for (const auto& m : model.module->modules(/*include_self=*/false)) {
        if (auto* bn = m->as<torch::nn::BatchNorm2d>(); bn && bn->weight.requires_grad()) {
            layers.push_back(bn);
        }
    }
    if (layers.empty() || batches <= 0 || data.size() == 0) {
        return;
    }
    std::vector<std::optional<double>> momenta;
    for (auto* bn : layers) {
        momenta.push_back(bn->options.momentum());
        bn->options.momentum(std::nullopt); // cumulative average
        bn->reset_running_stats();
    }
    const bool was_training = model.module->is_training();
    model.module->train();
    {
        torch::NoGradGuard no_grad;
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        Rng(seed).shuffle(order);
        auto chunks = make_batches(order, batch_size);
        const auto n = std::min(chunks.size(), static_cast<std::size_t>(batches));
        for (std::size_t i = 0; i < n; ++i) {
            if (chunks[i].size() < 2) {
                continue; // a single sample carries no batch statistics
            }
            const auto b = data.batch(chunks[i], std::nullopt);
            model.module->logits(b.left, b.right);
        }
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i]->options.momentum(momenta[i]);
    }
    model.module->train(was_training);
}

namespace {

void set_lr(torch::optim::AdamW& opt, double lr) {
    for (auto& group : opt.param_groups()) {
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
}

std::map<std::string, torch::Tensor> snapshot(const models::ModelHandle& model) {
    auto state = models::named_state(*model.module);
    for (auto& [name, t] : state) {
        t = t.detach().clone();
    }
    return state;
}

} // namespace

TrainResult train(models::ModelHandle& model, const ImageDataset& train_set, const ImageDataset& val_set,
                  const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    if (train_set.size() == 0 || val_set.size() == 0) {
        throw InputError("training and validation sets must be non-empty");
    }
    if (train_set.is_dual() != model.is_dual() || val_set.is_dual() != model.is_dual()) {
        throw InputError("dataset kind (single/dual eye) does not match the model");
    }
    const auto val_counts = val_set.class_counts();
    if (val_counts.normal == 0 || val_counts.cataract == 0) {
        throw MetricError("validation set holds a single class (" + std::to_string(val_counts.normal) + " normal, " +
                          std::to_string(val_counts.cataract) + " cataract)");
    }
    std::vector<torch::Tensor> params;
    for (const auto& p : model.module->parameters()) {
        if (p.requires_grad()) {
            params.push_back(p);
        }
    }
    if (params.empty()) {
        throw StateError("model has no trainable parameters");
    }
    torch::optim::AdamW optimizer(params,
                                  torch::optim::AdamWOptions(config.learning_rate).weight_decay(config.weight_decay));

    torch::Tensor class_weights;
    if (config.balance_classes) {
        const auto c = train_set.class_counts();
        const double n = static_cast<double>(c.total());
        class_weights = torch::tensor({c.normal ? n / (2.0 * c.normal) : 0.0, c.cataract ? n / (2.0 * c.cataract) : 0.0},
                                      torch::kFloat32);
    }
    const auto batch_size = static_cast<std::size_t>(config.batch_size);

    TrainResult result;
    auto sched = SchedulerState::start(config.learning_rate, config.scheduler);
    EarlyStopState stop{config.early_stop_patience};
    auto best_state = snapshot(model);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        torch::manual_seed(derive_seed({config.seed, static_cast<std::uint64_t>(epoch), 0xD80F}));
        model.module->train();
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        Rng(derive_seed({config.seed, static_cast<std::uint64_t>(epoch), 0x0DE5})).shuffle(order);
        std::optional<std::uint64_t> aug_seed;
        if (config.augment) {
            aug_seed = derive_seed({config.seed, static_cast<std::uint64_t>(epoch), 0xA116});
        }

        double loss_sum = 0.0;
        std::size_t seen = 0, batch_no = 0;
        for (const auto& idx : make_batches(order, batch_size)) {
            const auto b = train_set.batch(idx, aug_seed);
            torch::Tensor loss;
            try {
                const auto logits = model.module->logits(b.left, b.right);
                if (hooks.loss) {
                    loss = hooks.loss(logits, b);
                } else {
                    torch::Tensor w;
                    if (class_weights.defined()) {
                        w = class_weights.index_select(0, b.labels);
                    }
                    loss = cross_entropy(logits, b.labels, config.label_smoothing, w);
                }
            } catch (const NumericError& e) {
                throw DivergenceError(epoch, e.what());
            }
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                throw DivergenceError(epoch, "non-finite training loss");
            }
            optimizer.zero_grad();
            loss.backward();
            optimizer.step();
            loss_sum += value * static_cast<double>(idx.size());
            seen += idx.size();
            if (hooks.on_batch) {
                hooks.on_batch(epoch, batch_no, value);
            }
            ++batch_no;
        }

        recalibrate_batchnorm(model, train_set, batch_size, config.bn_recalibration_batches,
                              derive_seed({config.seed, static_cast<std::uint64_t>(epoch), 0xB4}));
        const auto pred = evaluation::predict(model, val_set, batch_size);
        const auto metrics = evaluation::report(pred);
        const auto val_labels = torch::tensor(std::vector<std::int64_t>(pred.labels.begin(), pred.labels.end()));
        double val_loss;
        try {
            val_loss = cross_entropy(pred.logits, val_labels, config.label_smoothing).item<double>();
        } catch (const NumericError& e) {
            throw DivergenceError(epoch, std::string("validation: ") + e.what());
        }

        EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), val_loss, metrics.accuracy, metrics.f1, sched.lr};
        result.history.push_back(rec);
        if (hooks.on_epoch) {
            hooks.on_epoch(rec);
        }

        const bool improved = metrics.accuracy > stop.best;
        const bool halt = early_stop_step(stop, epoch, metrics.accuracy);
        if (improved) {
            best_state = snapshot(model);
            if (!hooks.checkpoint_path.empty()) {
                models::CheckpointMeta meta{model.spec, model.siamese, train_set.options().stats, hooks.config_hash,
                                            epoch};
                models::save_checkpoint(hooks.checkpoint_path, model, meta);
                result.best_checkpoint = hooks.checkpoint_path;
            }
        }
        set_lr(optimizer, scheduler_step(sched, metrics.accuracy));
        if (halt) {
            result.stopped_early = true;
            break;
        }
    }

    models::load_named_state(*model.module, best_state, true, "best epoch");
    result.best_epoch = stop.best_epoch;
    result.best_val_accuracy = stop.best;
    return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
    std::vector<csv::Row> rows;
    for (const auto& r : history) {
        rows.push_back({std::to_string(r.epoch), csv::fmt(r.train_loss), csv::fmt(r.val_loss), csv::fmt(r.val_accuracy),
                        csv::fmt(r.val_f1), csv::fmt(r.lr, 10)});
    }
    csv::write_file(path, {"epoch", "train_loss", "val_loss", "val_acc", "val_f1", "lr"}, rows);
}

} // namespace cataract::training
