#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include <opencv2/imgproc.hpp>

#include "cataract/errors.hpp"
#include "cataract/image.hpp"
#include "cataract/preprocess.hpp"
#include "cataract/rng.hpp"
#include "cataract/synthdata.hpp"

using namespace cataract;
using namespace cataract::preprocess;

namespace {

RgbImage random_image(int h, int w, std::uint64_t seed) {
    cv::Mat m(h, w, CV_32FC3);
    Rng rng(seed);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            auto& p = m.at<cv::Vec3f>(y, x);
            for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(rng.uniform());
        }
    }
    return RgbImage(m);
}

RgbImage fundus(data::Label label, int size = 224, std::uint64_t index = 0) {
    synth::SynthSpec spec;
    spec.image_size = size;
    spec.seed = 11;
    return synth::generate_image(label, spec, index);
}

} // namespace

TEST_CASE("normalize maps the mean to zero and mean plus std to one") {
    auto px = torch::tensor({0.485, 0.456, 0.406}, torch::kFloat64).view({3, 1, 1});
    auto z = normalize(px);
    for (int c = 0; c < 3; ++c) CHECK(z[c][0][0].item<double>() == doctest::Approx(0.0).epsilon(1e-12));

    auto px1 = torch::tensor({0.485 + 0.229, 0.456 + 0.224, 0.406 + 0.225}, torch::kFloat64).view({3, 1, 1});
    auto one = normalize(px1);
    for (int c = 0; c < 3; ++c) CHECK(one[c][0][0].item<double>() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("normalize against a per-element oracle and round trip") {
    torch::manual_seed(3);
    const auto x = torch::rand({2, 3, 5, 7});
    const auto n = normalize(x);
    const auto xa = x.accessor<float, 4>();
    const auto na = n.accessor<float, 4>();
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 7; ++j) {
                    const double expect = (xa[b][c][i][j] - kImageNetStats.mean[c]) / kImageNetStats.std[c];
                    CHECK(na[b][c][i][j] == doctest::Approx(expect).epsilon(1e-5));
                }
    CHECK(torch::allclose(denormalize(n), x, 0.0, 1e-6));
}

TEST_CASE("zero or negative std is rejected") {
    const NormalizationStats bad{{0.5, 0.5, 0.5}, {0.2, 0.0, 0.2}};
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    CHECK_THROWS_AS(normalize(torch::rand({3, 2, 2}), bad), ParameterError);
    const NormalizationStats neg{{0.5, 0.5, 0.5}, {0.2, -0.1, 0.2}};
    CHECK_THROWS_AS(neg.validate(), ParameterError);
}

TEST_CASE("eval transform resizes and stays within the normalization bounds") {
    const auto big = fundus(data::Label::cataract, 448);
    const auto t = eval_transform(big);
    CHECK(t.sizes() == torch::IntArrayRef({3, 224, 224}));
    CHECK(torch::equal(t, eval_transform(big)));
    validate_image_tensor(t);

    const auto small = random_image(100, 130, 5);
    const auto u = eval_transform(small);
    for (int c = 0; c < 3; ++c) {
        const double lo = -kImageNetStats.mean[c] / kImageNetStats.std[c];
        const double hi = (1.0 - kImageNetStats.mean[c]) / kImageNetStats.std[c];
        CHECK(u[c].min().item<double>() >= lo - 1e-5);
        CHECK(u[c].max().item<double>() <= hi + 1e-5);
    }
}

TEST_CASE("eval transform uses bilinear resize") {
    const auto img = random_image(60, 80, 9);
    cv::Mat resized;
    cv::resize(img.mat(), resized, cv::Size(224, 224), 0, 0, cv::INTER_LINEAR);
    const auto expect = normalize(to_chw(RgbImage(resized)));
    CHECK(torch::allclose(eval_transform(img), expect, 0.0, 1e-5));
}

TEST_CASE("train transform is deterministic in the seed and keeps the contract") {
    const auto img = fundus(data::Label::normal, 256, 3);
    AugmentationPolicy policy;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto a = train_transform(img, policy, seed);
        const auto b = train_transform(img, policy, seed);
        CHECK(torch::equal(a, b));
        validate_image_tensor(a);
        for (int c = 0; c < 3; ++c) {
            const double lo = -kImageNetStats.mean[c] / kImageNetStats.std[c];
            const double hi = (1.0 - kImageNetStats.mean[c]) / kImageNetStats.std[c];
            CHECK(a[c].min().item<double>() >= lo - 1e-5);
            CHECK(a[c].max().item<double>() <= hi + 1e-5);
        }
    }
    CHECK_FALSE(torch::equal(train_transform(img, policy, 1), train_transform(img, policy, 2)));
}

TEST_CASE("identity policy reduces to the eval transform") {
    const auto policy = AugmentationPolicy::identity();
    for (const auto& img : {fundus(data::Label::cataract), random_image(300, 200, 1), random_image(50, 50, 2)}) {
        for (std::uint64_t seed : {0ULL, 7ULL, 123456789ULL}) {
            CHECK(torch::allclose(train_transform(img, policy, seed), eval_transform(img), 0.0, 1e-6));
        }
    }
}

TEST_CASE("horizontal flip alone mirrors the eval output") {
    auto policy = AugmentationPolicy::identity();
    policy.hflip_probability = 1.0;
    const auto img = random_image(64, 64, 4);
    CHECK(torch::allclose(train_transform(img, policy, 1), eval_transform(img).flip({2}), 0.0, 1e-6));
}

TEST_CASE("policy validation") {
    AugmentationPolicy p;
    CHECK_NOTHROW(p.validate());
    p.hflip_probability = 1.5;
    CHECK_THROWS_AS(p.validate(), ParameterError);
    p = AugmentationPolicy{};
    p.crop_scale_range = {0.9, 0.5};
    CHECK_THROWS_AS(p.validate(), ParameterError);
    p = AugmentationPolicy{};
    p.rotation_degrees = -1.0;
    CHECK_THROWS_AS(p.validate(), ParameterError);
    CHECK(AugmentationPolicy{}.rotation_degrees == 15.0);
}

TEST_CASE("tensor validation and display round trip") {
    CHECK_THROWS_AS(validate_image_tensor(torch::zeros({3, 100, 100})), ShapeError);
    auto t = torch::zeros({3, 224, 224});
    t[0][0][0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(validate_image_tensor(t), ShapeError);

    const auto img = random_image(224, 224, 8);
    const auto back = to_display_image(eval_transform(img));
    cv::Mat diff;
    cv::absdiff(back.mat(), img.mat(), diff);
    double max_diff = 0.0;
    cv::minMaxLoc(diff.reshape(1), nullptr, &max_diff);
    CHECK(max_diff < 1e-5);
}

TEST_CASE("decode errors") {
    CHECK_THROWS_AS(decode_image("/nonexistent/image.jpg"), IoError);
    const auto bogus = std::filesystem::temp_directory_path() / "preprocess_bogus.jpg";
    {
        std::FILE* f = std::fopen(bogus.c_str(), "wb");
        std::fputs("not an image", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(decode_image(bogus), DecodeError);
    std::filesystem::remove(bogus);

    const auto png = std::filesystem::temp_directory_path() / "preprocess_rt.png";
    const auto img = RgbImage::from_bgr8(random_image(20, 30, 6).to_bgr8());
    write_png(png, img);
    CHECK(identical(decode_image(png), img));
    std::filesystem::remove(png);
}
