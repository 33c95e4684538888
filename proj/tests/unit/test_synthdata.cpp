#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "cataract/csv.hpp"
#include "cataract/errors.hpp"
#include "cataract/synthdata.hpp"
#include "fixtures.hpp"

using namespace cataract;
using namespace cataract::synth;
using data::Label;

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::vector<double> brightness(Label label, std::uint64_t seed, std::size_t n) {
    SynthSpec spec;
    spec.seed = seed;
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(center_brightness(generate_image(label, spec, i)));
    return out;
}

} // namespace

TEST_CASE("images are pure in (spec, index, label)") {
    SynthSpec spec;
    spec.seed = 42;
    for (std::uint64_t i = 0; i < 5; ++i) {
        for (auto label : {Label::normal, Label::cataract}) {
            CHECK(identical(generate_image(label, spec, i), generate_image(label, spec, i)));
        }
    }
    CHECK_FALSE(identical(generate_image(Label::normal, spec, 0), generate_image(Label::normal, spec, 1)));
    CHECK_FALSE(identical(generate_image(Label::normal, spec, 0), generate_image(Label::cataract, spec, 0)));
}

TEST_CASE("shape and range") {
    const auto img = generate_image(Label::cataract, SynthSpec{}, 0);
    CHECK(img.height() == 224);
    CHECK(img.width() == 224);
    CHECK(img.mat().type() == CV_32FC3);
    double lo = 0.0, hi = 0.0;
    cv::minMaxLoc(img.mat().reshape(1), &lo, &hi);
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
}

TEST_CASE("cataract images are blurrier") {
    SynthSpec spec;
    spec.seed = 9;
    std::vector<double> normal, cataract;
    for (std::uint64_t i = 0; i < 50; ++i) {
        normal.push_back(laplacian_variance(generate_image(Label::normal, spec, i)));
        cataract.push_back(laplacian_variance(generate_image(Label::cataract, spec, i)));
    }
    CHECK(mean_of(cataract) < mean_of(normal));
}

TEST_CASE("a brightness threshold separates the classes") {
    // Fit the threshold on one seed, score it on another.
    const auto fit_n = brightness(Label::normal, 1, 100);
    const auto fit_c = brightness(Label::cataract, 1, 100);
    std::vector<double> candidates = fit_n;
    candidates.insert(candidates.end(), fit_c.begin(), fit_c.end());
    std::sort(candidates.begin(), candidates.end());
    double best_t = 0.0;
    std::size_t best_hits = 0;
    for (double t : candidates) {
        std::size_t hits = 0;
        for (double v : fit_n) hits += v < t;
        for (double v : fit_c) hits += v >= t;
        if (hits > best_hits) best_hits = hits, best_t = t;
    }
    const auto test_n = brightness(Label::normal, 2, 100);
    const auto test_c = brightness(Label::cataract, 2, 100);
    std::size_t hits = 0;
    for (double v : test_n) hits += v < best_t;
    for (double v : test_c) hits += v >= best_t;
    CHECK(static_cast<double>(hits) / 200.0 >= 0.95);
}

TEST_CASE("spec validation") {
    SynthSpec s;
    CHECK_NOTHROW(s.validate());
    s.cataract_blur_sigma = 0.0;
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s = SynthSpec{};
    s.image_size = 0;
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s = SynthSpec{};
    s.vessel_count_range = {5, 2};
    CHECK_THROWS_AS(s.validate(), ParameterError);
}

TEST_CASE("dataset generation counts and ingestion round trip") {
    const auto dir = fixtures::scratch("synth_full");
    SynthSpec spec;
    spec.image_size = 32;
    spec.seed = 3;
    const auto ds = generate_dataset(spec, dir);
    CHECK(ds.images_written == 200);
    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(ds.image_dir)) files += e.is_regular_file();
    CHECK(files == 200);

    const auto load = data::load_metadata(ds.metadata_csv);
    CHECK(load.records.size() == 100);
    CHECK(load.rejects.empty());
    const auto samples = data::filter_binary(load.records);
    CHECK(data::class_distribution(samples) == data::ClassCounts{100, 100});

    // Pair labels follow the either-eye rule.
    const auto pairs = data::build_dual_eye_samples(load.records);
    CHECK(pairs.size() == 100);
    bool saw_mixed = false;
    for (const auto& r : load.records) {
        const auto l = *data::eye_label(r.left_keywords);
        const auto rr = *data::eye_label(r.right_keywords);
        if (l != rr) saw_mixed = true;
    }
    CHECK(saw_mixed);
    for (const auto& p : pairs) {
        const auto it = std::find_if(load.records.begin(), load.records.end(),
                                     [&](const data::PatientRecord& r) { return r.patient_id == p.patient_id; });
        REQUIRE(it != load.records.end());
        CHECK(p.label == data::fuse_labels(*data::eye_label(it->left_keywords), *data::eye_label(it->right_keywords)));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("odd totals and unequal classes") {
    const auto dir = fixtures::scratch("synth_odd");
    SynthSpec spec;
    spec.image_size = 32;
    spec.n_normal = 3;
    spec.n_cataract = 0;
    const auto ds = generate_dataset(spec, dir);
    const auto load = data::load_metadata(ds.metadata_csv);
    CHECK(load.records.size() == 2);
    CHECK(load.rejects.empty());
    CHECK(data::class_distribution(data::filter_binary(load.records)) == data::ClassCounts{3, 0});
    std::filesystem::remove_all(dir);

    spec.n_normal = 0;
    CHECK_THROWS_AS(generate_dataset(spec, fixtures::scratch("synth_zero")), InputError);
}

TEST_CASE("generation is deterministic on disk") {
    const auto a = fixtures::scratch("synth_det_a");
    const auto b = fixtures::scratch("synth_det_b");
    SynthSpec spec;
    spec.image_size = 32;
    spec.n_normal = 6;
    spec.n_cataract = 5;
    generate_dataset(spec, a);
    generate_dataset(spec, b);
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(a / "metadata.csv") == slurp(b / "metadata.csv"));
    for (const auto& e : std::filesystem::directory_iterator(a / "images")) {
        CHECK(slurp(e.path()) == slurp(b / "images" / e.path().filename()));
    }
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}
