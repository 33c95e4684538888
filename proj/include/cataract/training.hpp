#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <torch/types.h>

#include "cataract/loader.hpp"
#include "cataract/modelzoo.hpp"

namespace cataract::training {

struct SchedulerConfig {
    double factor = 0.5;
    int patience_epochs = 2;
};

struct TrainConfig {
    std::int64_t batch_size = 16;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    double label_smoothing = 0.1;
    SchedulerConfig scheduler;
    int early_stop_patience = 5;
    int max_epochs = 50;
    std::uint64_t seed = 0;
    /// Inverse-frequency class weights in the loss. Off by default.
    bool balance_classes = false;
    /// Training batches (evaluation transform, no gradients) used to
    /// re-estimate BatchNorm running statistics before each validation.
    /// 0 disables it and keeps the usual exponential running averages.
    int bn_recalibration_batches = 32;
    /// Random augmentation on the training set.
    bool augment = true;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

/// Reduce-on-plateau over a maximized metric.
struct SchedulerState {
    double lr;
    double factor = 0.5;
    int patience = 2;
    double best = -std::numeric_limits<double>::infinity();
    int bad_steps = 0;
    int reductions = 0;

    static SchedulerState start(double lr, const SchedulerConfig& cfg) { return {lr, cfg.factor, cfg.patience_epochs}; }
};

/// A strict improvement resets the counter; once `patience` non-improving
/// steps accumulate the rate is multiplied by `factor` and the counter
/// restarts. Returns the learning rate to use next.
double scheduler_step(SchedulerState& state, double metric);

struct EarlyStopState {
    int patience = 5;
    double best = -std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int bad_epochs = 0;
};

/// Records `metric` for `epoch`. Returns true when training should stop.
/// Ties do not improve, so the earlier epoch keeps the title.
bool early_stop_step(EarlyStopState& state, int epoch, double metric);

/// Batch-mean smoothed negative log-likelihood. Targets put 1 - eps + eps/C on
/// the true class and eps/C elsewhere. `sample_weights` (optional, N) gives a
/// weighted mean. Throws NumericError for non-finite logits.
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels, double smoothing,
                            const torch::Tensor& sample_weights = {});

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double val_f1 = 0.0;
    double lr = 0.0; // rate used during this epoch
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    /// Empty when the run was not asked to persist checkpoints.
    std::filesystem::path best_checkpoint;
    bool stopped_early = false;
};

/// Replaces the default loss. Receives the model's logits for the batch.
using LossFn = std::function<torch::Tensor(const torch::Tensor& logits, const Batch& batch)>;

struct TrainHooks {
    LossFn loss;
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(int epoch, std::size_t batch, double loss)> on_batch;
    /// Best-so-far weights are written here (see save_checkpoint).
    std::filesystem::path checkpoint_path;
    std::string config_hash;
};

/// AdamW over the trainable parameters, per-epoch validation, plateau
/// scheduling and early stopping on validation accuracy. On return the model
/// holds the best epoch's weights.
///
/// Errors: MetricError when the validation set lacks a class, InputError for
/// an empty set, DivergenceError (with the epoch) for a non-finite loss.
TrainResult train(models::ModelHandle& model, const ImageDataset& train_set, const ImageDataset& val_set,
                  const TrainConfig& config, const TrainHooks& hooks = {});

/// Re-estimates running statistics of every BatchNorm layer whose parameters
/// are trainable, as a cumulative average over `batches` batches.
void recalibrate_batchnorm(models::ModelHandle& model, const ImageDataset& data, std::size_t batch_size,
                           int batches, std::uint64_t seed);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

} // namespace cataract::training
