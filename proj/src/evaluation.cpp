#include "cataract/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "cataract/csv.hpp"
#include "cataract/errors.hpp"

namespace cataract::evaluation {

ConfusionCounts confusion(const std::vector<int>& predicted, const std::vector<int>& labels) {
    if (predicted.size() != labels.size()) {
        throw InputError("prediction and label counts differ");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pos = predicted[i] == 1;
        if (labels[i] == 1) {
            (pos ? c.tp : c.fn) += 1;
        } else {
            (pos ? c.fp : c.tn) += 1;
        }
    }
    return c;
}

double accuracy(const ConfusionCounts& c) {
    const auto n = c.total();
    return n == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
}

double f1_score(const ConfusionCounts& c) {
    const auto denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw InputError("score and label counts differ");
    }
    const auto P = std::count(labels.begin(), labels.end(), 1);
    const auto N = static_cast<std::int64_t>(labels.size()) - P;
    if (P == 0 || N == 0) {
        throw MetricError("ROC needs both classes; got " + std::to_string(P) + " positive and " +
                          std::to_string(N) + " negative");
    }
    for (const auto s : scores) {
        if (!std::isfinite(s)) {
            throw NumericError("non-finite score in ROC input");
        }
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double t = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == t; ++i) {
            (labels[order[i]] == 1 ? tp : fp) += 1;
        }
        const RocPoint next{static_cast<double>(fp) / static_cast<double>(N),
                            static_cast<double>(tp) / static_cast<double>(P), t};
        const auto& prev = roc.points.back();
        roc.auc += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) / 2.0;
        roc.points.push_back(next);
    }
    return roc;
}

Predictions predict(models::ModelHandle& model, const training::ImageDataset& data, std::size_t batch_size) {
    if (data.size() == 0) {
        throw InputError("cannot evaluate on an empty dataset");
    }
    if (data.is_dual() != model.is_dual()) {
        throw InputError(std::string(model.is_dual() ? "dual-eye" : "single-eye") + " model given " +
                         (data.is_dual() ? "paired" : "single-eye") + " data");
    }
    const bool was_training = model.module->is_training();
    model.module->eval();
    torch::NoGradGuard no_grad;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<torch::Tensor> chunks;
    for (const auto& idx : training::make_batches(order, batch_size)) {
        const auto b = data.batch(idx, std::nullopt);
        chunks.push_back(model.module->logits(b.left, b.right));
    }
    model.module->train(was_training);

    Predictions out;
    out.logits = torch::cat(chunks).to(torch::kFloat64);
    const auto probs = torch::softmax(out.logits, 1).select(1, 1).contiguous();
    const auto argmax = out.logits.argmax(1).contiguous();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto k = static_cast<std::int64_t>(i);
        out.ids.push_back(data.id(i));
        out.labels.push_back(static_cast<int>(data.label(i)));
        out.predicted.push_back(static_cast<int>(argmax[k].item<std::int64_t>()));
        out.scores.push_back(probs[k].item<double>());
    }
    return out;
}

double MetricsReport::auc() const noexcept {
    return roc ? roc->auc : std::numeric_limits<double>::quiet_NaN();
}

MetricsReport report(const Predictions& p) {
    MetricsReport r;
    r.confusion = confusion(p.predicted, p.labels);
    r.accuracy = accuracy(r.confusion);
    r.f1 = f1_score(r.confusion);
    const bool both = std::count(p.labels.begin(), p.labels.end(), 1) > 0 &&
                      std::count(p.labels.begin(), p.labels.end(), 0) > 0;
    if (both) {
        r.roc = roc_curve(p.scores, p.labels);
    }
    return r;
}

MetricsReport evaluate(models::ModelHandle& model, const training::ImageDataset& data, std::size_t batch_size) {
    return report(predict(model, data, batch_size));
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
    std::vector<csv::Row> out;
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out.push_back({r.model, r.regime, csv::fmt(m.accuracy), csv::fmt(m.f1), csv::fmt(m.auc()),
                       std::to_string(m.confusion.tp), std::to_string(m.confusion.fp),
                       std::to_string(m.confusion.tn), std::to_string(m.confusion.fn),
                       std::to_string(r.params_trainable)});
    }
    csv::write_file(path, {"model", "regime", "accuracy", "f1", "auc", "tp", "fp", "tn", "fn", "params_trainable"},
                    out);
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& roc) {
    std::vector<csv::Row> out;
    for (const auto& p : roc.points) {
        out.push_back({csv::fmt(p.fpr), csv::fmt(p.tpr), csv::fmt(p.threshold)});
    }
    csv::write_file(path, {"fpr", "tpr", "threshold"}, out);
}

void write_predictions_csv(const std::filesystem::path& path, const Predictions& p) {
    std::vector<csv::Row> out;
    for (std::size_t i = 0; i < p.ids.size(); ++i) {
        out.push_back({p.ids[i], std::to_string(p.labels[i]), std::to_string(p.predicted[i]), csv::fmt(p.scores[i])});
    }
    csv::write_file(path, {"id", "label", "predicted", "score"}, out);
}

namespace {

const cv::Scalar kPalette[] = {{200, 80, 30}, {40, 40, 220}, {40, 160, 40}, {160, 40, 160}, {20, 140, 220}};

void save_png(const std::filesystem::path& path, const cv::Mat& canvas) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), canvas)) {
        throw IoError("cannot write plot: " + path.string());
    }
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

} // namespace

void plot_roc_png(const std::filesystem::path& path, const std::vector<std::pair<std::string, RocCurve>>& curves) {
    constexpr int size = 480, margin = 50;
    constexpr int span = size - 2 * margin;
    cv::Mat canvas(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
    auto at = [&](double fpr, double tpr) {
        return cv::Point(margin + static_cast<int>(std::lround(fpr * span)),
                         size - margin - static_cast<int>(std::lround(tpr * span)));
    };
    cv::rectangle(canvas, at(0, 1), at(1, 0), cv::Scalar(0, 0, 0), 1);
    cv::line(canvas, at(0, 0), at(1, 1), cv::Scalar(160, 160, 160), 1, cv::LINE_AA);
    for (std::size_t c = 0; c < curves.size(); ++c) {
        const auto colour = kPalette[c % std::size(kPalette)];
        const auto& pts = curves[c].second.points;
        for (std::size_t i = 1; i < pts.size(); ++i) {
            cv::line(canvas, at(pts[i - 1].fpr, pts[i - 1].tpr), at(pts[i].fpr, pts[i].tpr), colour, 2, cv::LINE_AA);
        }
        cv::putText(canvas, curves[c].first + " AUC " + fixed(curves[c].second.auc, 4),
                    cv::Point(margin + 120, size - margin - 20 - 18 * static_cast<int>(c)), cv::FONT_HERSHEY_SIMPLEX,
                    0.45, colour, 1, cv::LINE_AA);
    }
    cv::putText(canvas, "false positive rate", cv::Point(size / 2 - 70, size - 15), cv::FONT_HERSHEY_SIMPLEX, 0.5,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(canvas, "true positive rate", cv::Point(5, margin - 15), cv::FONT_HERSHEY_SIMPLEX, 0.5,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    save_png(path, canvas);
}

std::string format_pair(double acc, double f1) {
    return fixed(acc, 4) + " / " + fixed(f1, 4);
}

AblationTable compare_regimes(const std::map<std::pair<std::string, models::Regime>, MetricsReport>& results) {
    std::map<std::string, AblationRow> rows;
    for (const auto& [key, report] : results) {
        auto& row = rows[key.first];
        row.model = key.first;
        (key.second == models::Regime::full_finetune ? row.full_finetune : row.frozen_backbone) = report;
    }
    AblationTable table;
    for (auto& [name, row] : rows) {
        if (row.full_finetune && row.frozen_backbone) {
            row.delta_accuracy = row.full_finetune->accuracy - row.frozen_backbone->accuracy;
            row.delta_f1 = row.full_finetune->f1 - row.frozen_backbone->f1;
        }
        table.rows.push_back(row);
    }
    return table;
}

std::string AblationTable::render() const {
    auto cell = [](const std::optional<MetricsReport>& m) { return m ? format_pair(m->accuracy, m->f1) : "-"; };
    auto delta = [](const std::optional<double>& a, const std::optional<double>& b) {
        return a ? fixed(*a, 4) + " / " + fixed(*b, 4) : std::string("-");
    };
    std::vector<std::array<std::string, 4>> lines{{"Model", "FT (Acc / F1)", "FR (Acc / F1)", "Delta (Acc / F1)"}};
    for (const auto& r : rows) {
        lines.push_back({r.model, cell(r.full_finetune), cell(r.frozen_backbone), delta(r.delta_accuracy, r.delta_f1)});
    }
    std::array<std::size_t, 4> width{};
    for (const auto& l : lines) {
        for (std::size_t c = 0; c < 4; ++c) {
            width[c] = std::max(width[c], l[c].size());
        }
    }
    std::ostringstream out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        for (std::size_t c = 0; c < 4; ++c) {
            out << (c ? " | " : "") << std::left << std::setw(static_cast<int>(width[c])) << lines[i][c];
        }
        out << '\n';
        if (i == 0) {
            for (std::size_t c = 0; c < 4; ++c) {
                out << (c ? "-|-" : "") << std::string(width[c], '-');
            }
            out << '\n';
        }
    }
    return out.str();
}

void AblationTable::write_csv(const std::filesystem::path& path) const {
    auto num = [](const std::optional<double>& v) { return v ? csv::fmt(*v) : std::string(); };
    auto acc = [](const std::optional<MetricsReport>& m) { return m ? std::optional(m->accuracy) : std::nullopt; };
    auto f1 = [](const std::optional<MetricsReport>& m) { return m ? std::optional(m->f1) : std::nullopt; };
    std::vector<csv::Row> out;
    for (const auto& r : rows) {
        out.push_back({r.model, num(acc(r.full_finetune)), num(f1(r.full_finetune)), num(acc(r.frozen_backbone)),
                       num(f1(r.frozen_backbone)), num(r.delta_accuracy), num(r.delta_f1)});
    }
    csv::write_file(path, {"model", "ft_accuracy", "ft_f1", "fr_accuracy", "fr_f1", "delta_accuracy", "delta_f1"},
                    out);
}

void AblationTable::plot_png(const std::filesystem::path& path) const {
    constexpr int height = 360, margin = 40, group = 90;
    const int width = 2 * margin + group * static_cast<int>(std::max<std::size_t>(rows.size(), 1));
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    const int base = height - margin - 20;
    const int span = base - margin;
    cv::line(canvas, {margin, base}, {width - margin, base}, cv::Scalar(0, 0, 0), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int x0 = margin + group * static_cast<int>(i) + 15;
        const std::optional<MetricsReport>* bars[] = {&rows[i].full_finetune, &rows[i].frozen_backbone};
        for (int b = 0; b < 2; ++b) {
            if (*bars[b]) {
                const int h = static_cast<int>(std::lround((*bars[b])->accuracy * span));
                cv::rectangle(canvas, {x0 + 30 * b, base - h}, {x0 + 30 * b + 26, base}, kPalette[b], cv::FILLED);
            }
        }
        cv::putText(canvas, rows[i].model.substr(0, 14), {x0 - 10, base + 15}, cv::FONT_HERSHEY_SIMPLEX, 0.35,
                    cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    }
    cv::putText(canvas, "accuracy: FT (blue) vs FR (red)", {margin, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    save_png(path, canvas);
}

} // namespace cataract::evaluation
