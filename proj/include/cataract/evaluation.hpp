#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/types.h>

#include "cataract/loader.hpp"
#include "cataract/modelzoo.hpp"

namespace cataract::evaluation {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const noexcept { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Positive class is cataract (label 1).
ConfusionCounts confusion(const std::vector<int>& predicted, const std::vector<int>& labels);

/// (tp+tn)/total; 0 for an empty matrix.
double accuracy(const ConfusionCounts& c);
/// Positive-class F1 = 2tp/(2tp+fp+fn); 0 when nothing is positive on either side.
double f1_score(const ConfusionCounts& c);

struct RocPoint {
    double fpr;
    double tpr;
    double threshold; // +inf for the origin
};

struct RocCurve {
    std::vector<RocPoint> points; // descending threshold, (0,0) .. (1,1)
    double auc = 0.0;
};

/// Staircase ROC over the distinct score values with trapezoidal AUC (tied
/// scores form one diagonal step, i.e. half credit). Throws MetricError unless
/// both classes are present.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

/// Model outputs over a dataset, in dataset order.
struct Predictions {
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<int> predicted;   // argmax of the logits
    std::vector<double> scores;   // softmax probability of class 1
    torch::Tensor logits;         // N x 2
};

/// Runs the model in eval mode without gradients. Restores the previous
/// train/eval mode afterwards. Throws InputError for an empty dataset or a
/// single/dual mismatch between model and data.
Predictions predict(models::ModelHandle& model, const training::ImageDataset& data, std::size_t batch_size = 16);

struct MetricsReport {
    double accuracy = 0.0;
    double f1 = 0.0;
    ConfusionCounts confusion;
    /// Absent when the labels hold a single class.
    std::optional<RocCurve> roc;
    double auc() const noexcept;
};

MetricsReport report(const Predictions& predictions);
MetricsReport evaluate(models::ModelHandle& model, const training::ImageDataset& data, std::size_t batch_size = 16);

struct MetricsRow {
    std::string model;
    std::string regime;
    MetricsReport metrics;
    std::int64_t params_trainable = 0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
void write_roc_csv(const std::filesystem::path& path, const RocCurve& roc);
void write_predictions_csv(const std::filesystem::path& path, const Predictions& predictions);
/// ROC plot with the chance diagonal; one curve per entry.
void plot_roc_png(const std::filesystem::path& path, const std::vector<std::pair<std::string, RocCurve>>& curves);

/// "0.9858 / 0.9857" (accuracy / F1, 4 decimals).
std::string format_pair(double accuracy, double f1);

struct AblationRow {
    std::string model;
    std::optional<MetricsReport> full_finetune;
    std::optional<MetricsReport> frozen_backbone;
    /// Full fine-tune minus frozen; set only when both regimes are present.
    std::optional<double> delta_accuracy;
    std::optional<double> delta_f1;
};

struct AblationTable {
    std::vector<AblationRow> rows; // sorted by model name

    std::string render() const;
    void write_csv(const std::filesystem::path& path) const;
    /// Grouped bars, accuracy per model with one bar per regime.
    void plot_png(const std::filesystem::path& path) const;
};

AblationTable compare_regimes(const std::map<std::pair<std::string, models::Regime>, MetricsReport>& results);

} // namespace cataract::evaluation
