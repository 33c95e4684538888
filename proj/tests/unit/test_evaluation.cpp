#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cataract/csv.hpp"
#include "cataract/errors.hpp"
#include "cataract/evaluation.hpp"
#include "cataract/rng.hpp"
#include "fixtures.hpp"

using namespace cataract;
using namespace cataract::evaluation;

namespace {

// Probability that a random positive outranks a random negative, ties half.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

// Predictions built from raw logits, mirroring predict().
Predictions from_logits(const torch::Tensor& logits, const std::vector<int>& labels) {
    Predictions p;
    p.logits = logits;
    p.labels = labels;
    const auto prob = torch::softmax(logits, 1);
    for (int i = 0; i < logits.size(0); ++i) {
        p.ids.push_back("s" + std::to_string(i));
        p.predicted.push_back(static_cast<int>(logits[i].argmax().item<std::int64_t>()));
        p.scores.push_back(prob[i][1].item<double>());
    }
    return p;
}

void check_same(const MetricsReport& a, const MetricsReport& b) {
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.f1 == b.f1);
    CHECK(a.confusion == b.confusion);
    CHECK(a.auc() == doctest::Approx(b.auc()).epsilon(1e-12));
}

} // namespace

TEST_CASE("confusion, accuracy and F1 by hand") {
    const auto c = confusion({1, 1, 0, 0, 1}, {1, 0, 1, 0, 1});
    CHECK(c == ConfusionCounts{2, 1, 1, 1});
    CHECK(accuracy(c) == doctest::Approx(0.6));
    CHECK(f1_score(c) == doctest::Approx(4.0 / 6.0));

    CHECK(f1_score(ConfusionCounts{1, 1, 0, 1}) == 0.5);
    CHECK(f1_score(ConfusionCounts{0, 0, 5, 0}) == 0.0);
    CHECK(accuracy(ConfusionCounts{}) == 0.0);

    const auto perfect = confusion({0, 1, 1}, {0, 1, 1});
    CHECK(accuracy(perfect) == 1.0);
    CHECK(f1_score(perfect) == 1.0);
    CHECK_THROWS(confusion({0, 1}, {0}));
}

TEST_CASE("accuracy and F1 agree with the formulas on random matrices") {
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        const ConfusionCounts c{rng.between(0, 50), rng.between(0, 50), rng.between(0, 50), rng.between(0, 50)};
        if (c.total() == 0) continue;
        CHECK(accuracy(c) == doctest::Approx(static_cast<double>(c.tp + c.tn) / c.total()).epsilon(1e-15));
        const auto denom = 2 * c.tp + c.fp + c.fn;
        CHECK(f1_score(c) == (denom == 0 ? 0.0 : 2.0 * c.tp / denom));
        CHECK(f1_score(c) >= 0.0);
        CHECK(f1_score(c) <= 1.0);
    }
}

TEST_CASE("ROC worked examples") {
    CHECK(roc_curve({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}).auc == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(roc_curve({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}).auc == 1.0);
    CHECK(roc_curve({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}).auc == 0.5);
    CHECK(roc_curve({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}).auc == 0.0);

    const auto r = roc_curve({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
    REQUIRE(r.points.size() == 5);
    CHECK(r.points.front().fpr == 0.0);
    CHECK(r.points.front().tpr == 0.0);
    CHECK(std::isinf(r.points.front().threshold));
    CHECK(r.points.back().fpr == 1.0);
    CHECK(r.points.back().tpr == 1.0);
    for (std::size_t i = 1; i < r.points.size(); ++i) {
        CHECK(r.points[i].threshold < r.points[i - 1].threshold);
        CHECK(r.points[i].fpr >= r.points[i - 1].fpr);
        CHECK(r.points[i].tpr >= r.points[i - 1].tpr);
    }
}

TEST_CASE("ROC errors") {
    CHECK_THROWS_AS(roc_curve({0.1, 0.2}, {1, 1}), MetricError);
    CHECK_THROWS_AS(roc_curve({0.1, 0.2}, {0, 0}), MetricError);
    CHECK_THROWS_AS(roc_curve({0.1, NAN}, {0, 1}), NumericError);
}

TEST_CASE("trapezoidal AUC equals the pairwise oracle, with ties") {
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        const auto n = static_cast<std::size_t>(rng.between(2, 1000));
        std::vector<double> s(n);
        std::vector<int> y(n);
        const int levels = static_cast<int>(rng.between(2, 30));
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = static_cast<int>(rng.below(2));
            s[i] = std::floor(rng.uniform() * levels) / levels + (y[i] ? 0.1 * rng.uniform() : 0.0);
        }
        y[0] = 0;
        y[1] = 1;
        CHECK(std::abs(roc_curve(s, y).auc - pairwise_auc(s, y)) < 1e-9);
    }
}

TEST_CASE("metrics ignore order and positive logit scaling") {
    Rng rng(3);
    torch::manual_seed(3);
    const int n = 200;
    const auto logits = torch::randn({n, 2}, torch::kFloat64);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = static_cast<int>(rng.below(2));
    const auto base = report(from_logits(logits, labels));

    std::vector<std::int64_t> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<int> permuted_labels(n);
    for (int i = 0; i < n; ++i) permuted_labels[i] = labels[perm[i]];
    check_same(base, report(from_logits(logits.index_select(0, torch::tensor(perm)), permuted_labels)));

    for (double k : {0.01, 0.5, 3.0, 40.0}) {
        const auto scaled = report(from_logits(logits * k, labels));
        CHECK(scaled.accuracy == base.accuracy);
        CHECK(scaled.f1 == base.f1);
        CHECK(scaled.confusion == base.confusion);
    }
}

TEST_CASE("report without both classes leaves the ROC out") {
    const auto rep = report(from_logits(torch::tensor({{1.0, 0.0}, {0.2, 0.1}}, torch::kFloat64), {0, 0}));
    CHECK_FALSE(rep.roc.has_value());
    CHECK(std::isnan(rep.auc()));
    CHECK(rep.accuracy == 1.0);
}

TEST_CASE("table formatting and regime comparison") {
    CHECK(format_pair(0.9858, 0.9857) == "0.9858 / 0.9857");
    CHECK(format_pair(1.0, 0.5) == "1.0000 / 0.5000");

    MetricsReport ft;
    ft.accuracy = 0.98;
    ft.f1 = 0.90;
    MetricsReport fr;
    fr.accuracy = 0.93;
    fr.f1 = 0.70;

    const auto one = compare_regimes({{{"resnet50", models::Regime::frozen_backbone}, fr}});
    REQUIRE(one.rows.size() == 1);
    CHECK_FALSE(one.rows[0].delta_accuracy.has_value());
    CHECK_FALSE(one.rows[0].full_finetune.has_value());

    const auto two = compare_regimes({{{"resnet50", models::Regime::frozen_backbone}, fr},
                                      {{"resnet50", models::Regime::full_finetune}, ft},
                                      {{"densenet121", models::Regime::full_finetune}, ft}});
    REQUIRE(two.rows.size() == 2);
    CHECK(two.rows[0].model == "densenet121");
    CHECK(two.rows[1].model == "resnet50");
    CHECK(*two.rows[1].delta_accuracy == doctest::Approx(0.05));
    CHECK(*two.rows[1].delta_f1 == doctest::Approx(0.20));
    const auto text = two.render();
    CHECK(text.find("0.9800 / 0.9000") != std::string::npos);
    CHECK(text.find("0.9300 / 0.7000") != std::string::npos);

    const auto dir = fixtures::scratch("evaluation_tables");
    two.write_csv(dir / "ablation.csv");
    const auto table = csv::read_file(dir / "ablation.csv");
    CHECK((table.header ==
           csv::Row{"model", "ft_accuracy", "ft_f1", "fr_accuracy", "fr_f1", "delta_accuracy", "delta_f1"}));
    CHECK(table.rows.size() == 2);
    two.plot_png(dir / "ablation.png");
    CHECK(std::filesystem::file_size(dir / "ablation.png") > 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("CSV artifacts") {
    const auto dir = fixtures::scratch("evaluation_csv");
    const auto preds = from_logits(torch::tensor({{2.0, 0.0}, {0.0, 1.0}, {1.0, 1.5}, {0.3, 0.2}}, torch::kFloat64),
                                   {0, 1, 0, 1});
    const auto rep = report(preds);
    write_metrics_csv(dir / "metrics.csv", {{"mobilenet_v2", "full_finetune", rep, 2226434}});
    const auto m = csv::read_file(dir / "metrics.csv");
    CHECK((m.header == csv::Row{"model", "regime", "accuracy", "f1", "auc", "tp", "fp", "tn", "fn",
                                "params_trainable"}));
    REQUIRE(m.rows.size() == 1);
    CHECK(m.rows[0][9] == "2226434");
    CHECK(std::stoll(m.rows[0][5]) + std::stoll(m.rows[0][6]) + std::stoll(m.rows[0][7]) +
              std::stoll(m.rows[0][8]) ==
          4);

    write_roc_csv(dir / "roc.csv", *rep.roc);
    CHECK((csv::read_file(dir / "roc.csv").header == csv::Row{"fpr", "tpr", "threshold"}));
    write_predictions_csv(dir / "pred.csv", preds);
    CHECK(csv::read_file(dir / "pred.csv").rows.size() == 4);
    plot_roc_png(dir / "roc.png", {{"m", *rep.roc}});
    CHECK(std::filesystem::exists(dir / "roc.png"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("predict on a model: order invariance and mode restore") {
    const auto dir = fixtures::scratch("evaluation_predict");
    const auto corpus = fixtures::make_corpus(dir / "data", 6);
    const auto opts = fixtures::small_images();
    auto samples = corpus.split.train;
    training::SingleEyeDataset forward_set(samples, corpus.written.image_dir, opts);
    std::reverse(samples.begin(), samples.end());
    training::SingleEyeDataset reversed_set(samples, corpus.written.image_dir, opts);

    auto model = models::build_model(models::ModelSpec::of(models::BackboneName::mobilenet_v2));
    model.module->train(true);
    const auto a = evaluate(model, forward_set, 4);
    CHECK(model.module->is_training());
    const auto b = evaluate(model, reversed_set, 5);
    check_same(a, b);
    CHECK(a.confusion.total() == static_cast<std::int64_t>(forward_set.size()));

    training::SingleEyeDataset empty({}, corpus.written.image_dir, opts);
    CHECK_THROWS_AS(predict(model, empty), InputError);
    training::DualEyeDataset pairs(corpus.pair_split.train, corpus.written.image_dir, opts);
    CHECK_THROWS_AS(predict(model, pairs), InputError);
    std::filesystem::remove_all(dir);
}
