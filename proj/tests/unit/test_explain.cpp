#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "cataract/backbones.hpp"
#include "cataract/errors.hpp"
#include "cataract/explain.hpp"
#include "cataract/preprocess.hpp"
#include "cataract/synthdata.hpp"
#include "fixtures.hpp"

using namespace cataract;
using namespace cataract::explain;

namespace {

// One 1x1 convolution followed by ReLU: small enough to compute Grad-CAM by hand.
class ToyBackbone : public models::ConvBackbone {
public:
    explicit ToyBackbone(std::int64_t channels) : channels_(channels) {
        conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, channels, 1)));
        add_stage("conv", torch::nn::AnyModule(conv));
        add_stage("relu", torch::nn::AnyModule(torch::nn::ReLU()));
    }
    std::int64_t feature_dim() const override { return channels_; }

    torch::nn::Conv2d conv{nullptr};

private:
    std::int64_t channels_;
};

struct Toy {
    std::shared_ptr<ToyBackbone> backbone;
    std::shared_ptr<models::SingleEyeClassifier> model;
};

Toy make_toy(std::uint64_t seed, std::int64_t channels = 4) {
    torch::manual_seed(seed);
    Toy t;
    t.backbone = std::make_shared<ToyBackbone>(channels);
    t.model = std::make_shared<models::SingleEyeClassifier>(t.backbone, 2);
    return t;
}

// Scores are linear in the pooled activations, so the channel weight is the
// head weight divided by the number of positions.
torch::Tensor toy_oracle(const Toy& t, const torch::Tensor& image, int cls) {
    torch::NoGradGuard g;
    const auto a = torch::relu(t.backbone->conv->forward(image.unsqueeze(0))).squeeze(0).to(torch::kFloat64);
    const auto w = t.model->head()->weight[cls].to(torch::kFloat64);
    const double positions = static_cast<double>(a.size(1) * a.size(2));
    auto map = torch::zeros({a.size(1), a.size(2)}, torch::kFloat64);
    for (std::int64_t k = 0; k < a.size(0); ++k) map += (w[k].item<double>() / positions) * a[k];
    map = torch::relu(map);
    const double peak = map.max().item<double>();
    return peak > 0 ? map / peak : map;
}

} // namespace

TEST_CASE("toy network matches the hand-computed map") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto toy = make_toy(seed);
        const auto image = torch::randn({3, 9, 11});
        for (int cls : {0, 1}) {
            const auto h = grad_cam(*toy.model, image, std::string("relu"), cls);
            const auto expect = toy_oracle(toy, image, cls);
            CHECK(h.source.sizes() == expect.sizes());
            CHECK((h.source.to(torch::kFloat64) - expect).abs().max().item<double>() < 1e-5);
            CHECK(h.values.sizes() == torch::IntArrayRef({9, 11}));
            CHECK(h.source_layer == "relu");
            CHECK(h.target_class == cls);
        }
    }
}

TEST_CASE("negative class evidence gives an all-zero map") {
    auto toy = make_toy(1);
    {
        torch::NoGradGuard g;
        toy.model->head()->weight[0].fill_(-1.0);
    }
    const auto h = grad_cam(*toy.model, torch::rand({3, 8, 8}), std::nullopt, 0);
    CHECK(h.values.abs().max().item<double>() == 0.0);
    CHECK(h.source.abs().max().item<double>() == 0.0);
}

TEST_CASE("normalization is idempotent and bounded") {
    torch::manual_seed(4);
    for (int i = 0; i < 20; ++i) {
        const auto m = torch::randn({7, 5});
        const auto once = normalize_heatmap(m);
        CHECK(torch::equal(once, normalize_heatmap(once)));
        CHECK(once.min().item<float>() >= 0.0f);
        CHECK(once.max().item<float>() == 1.0f);
    }
    CHECK(normalize_heatmap(-torch::ones({3, 3})).abs().sum().item<float>() == 0.0f);
}

TEST_CASE("real CNN backbones give bounded maps of the input size") {
    const auto img = synth::generate_image(data::Label::cataract, synth::SynthSpec{}, 0);
    cv::Mat small;
    cv::resize(img.mat(), small, cv::Size(96, 96), 0, 0, cv::INTER_LINEAR);
    const auto x = preprocess::normalize(preprocess::to_chw(RgbImage(small)));
    for (auto name : {models::BackboneName::mobilenet_v2, models::BackboneName::resnet50,
                      models::BackboneName::densenet121, models::BackboneName::efficientnet_b0}) {
        CAPTURE(models::to_string(name));
        auto model = models::build_model(models::ModelSpec::of(name));
        model.module->train(true);
        const auto h = grad_cam(model, x, std::nullopt, 1);
        CHECK(h.values.sizes() == torch::IntArrayRef({96, 96}));
        CHECK(torch::isfinite(h.values).all().item<bool>());
        CHECK(h.values.min().item<float>() >= 0.0f);
        const float peak = h.values.max().item<float>();
        CHECK((peak == 0.0f || std::abs(peak - 1.0f) < 1e-6f));
        CHECK(model.module->is_training());
    }
}

TEST_CASE("rejections") {
    auto vit = models::build_model(models::ModelSpec::of(models::BackboneName::vit_tiny));
    CHECK_THROWS_AS(grad_cam(vit, torch::zeros({3, 224, 224}), std::nullopt, 1), UnsupportedLayerError);
    CHECK_THROWS_AS(grad_cam(*vit.module, torch::zeros({3, 224, 224}), std::nullopt, 1), UnsupportedLayerError);

    auto toy = make_toy(2);
    CHECK_THROWS_AS(grad_cam(*toy.model, torch::zeros({3, 8, 8}), std::string("nope"), 1), UnsupportedLayerError);
    CHECK_THROWS_AS(grad_cam(*toy.model, torch::zeros({3, 8, 8}), std::nullopt, 2), InputError);

    auto siamese = models::build_siamese(models::SiameseSpec{});
    CHECK_THROWS_AS(grad_cam(siamese, torch::zeros({3, 64, 64}), std::nullopt, 1), InputError);
}

TEST_CASE("overlay blends with the JET colour map") {
    const auto base = synth::generate_image(data::Label::normal, synth::SynthSpec{}, 3);
    torch::manual_seed(5);
    const auto hm = torch::rand({224, 224});

    const auto none = overlay(base, hm, 0.0);
    CHECK(identical(none, base));

    const auto full = overlay(base, hm, 1.0);
    const auto hmc = hm.contiguous();
    cv::Mat src(224, 224, CV_32F, const_cast<float*>(hmc.data_ptr<float>()));
    cv::Mat u8, bgr;
    src.convertTo(u8, CV_8U, 255.0);
    cv::applyColorMap(u8, bgr, cv::COLORMAP_JET);
    cv::Mat diff;
    cv::absdiff(full.to_bgr8(), bgr, diff);
    double worst = 0.0;
    cv::minMaxLoc(diff.reshape(1), nullptr, &worst);
    CHECK(worst <= 1.0);

    // Blue at zero, red at one.
    const auto cold = overlay(base, torch::zeros({4, 4}), 1.0).mat().at<cv::Vec3f>(0, 0);
    const auto hot = overlay(base, torch::ones({4, 4}), 1.0).mat().at<cv::Vec3f>(0, 0);
    CHECK(cold[2] > cold[0]);
    CHECK(hot[0] > hot[2]);

    CHECK_THROWS_AS(overlay(base, hm, 1.5), ParameterError);
    CHECK_THROWS_AS(overlay(base, hm, -0.1), ParameterError);
}

TEST_CASE("region mass and CSV round trip") {
    auto disc = torch::zeros({20, 20});
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j)
            if ((i - 9.5) * (i - 9.5) + (j - 9.5) * (j - 9.5) <= 25.0) disc[i][j] = 1.0;
    const auto m = region_mass(disc, 0.25);
    CHECK(m.inside == 1.0);
    CHECK(m.outside == 0.0);

    const auto dir = fixtures::scratch("explain_csv");
    torch::manual_seed(6);
    const auto hm = torch::rand({5, 6});
    write_heatmap_csv(dir / "h.csv", hm);
    const auto back = read_heatmap_csv(dir / "h.csv");
    CHECK(back.sizes() == hm.sizes());
    CHECK((back.to(torch::kFloat64) - hm.to(torch::kFloat64)).abs().max().item<double>() <= 5e-7);
    {
        std::ofstream bad(dir / "bad.csv");
        bad << "0.1,0.2\n0.3\n";
    }
    CHECK_THROWS_AS(read_heatmap_csv(dir / "bad.csv"), SchemaError);
    std::filesystem::remove_all(dir);
}
