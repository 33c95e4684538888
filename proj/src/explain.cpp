#include "cataract/explain.hpp"

#include <fstream>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "cataract/csv.hpp"
#include "cataract/errors.hpp"

namespace cataract::explain {

torch::Tensor normalize_heatmap(const torch::Tensor& map) {
    auto m = map.to(torch::kFloat32).clamp_min(0.0);
    const float peak = m.numel() ? m.max().item<float>() : 0.0f;
    return peak > 0.0f ? m / peak : torch::zeros_like(m);
}

Heatmap grad_cam(models::FundusClassifier& model, const torch::Tensor& image, const std::optional<std::string>& layer,
                 int target_class) {
    if (target_class != 0 && target_class != 1) {
        throw InputError("target class must be 0 or 1");
    }
    auto* single = dynamic_cast<models::SingleEyeClassifier*>(&model);
    if (!single) {
        throw InputError("Grad-CAM runs on single-eye classifiers");
    }
    auto conv = std::dynamic_pointer_cast<models::ConvBackbone>(model.backbone());
    if (!conv) {
        throw UnsupportedLayerError("Grad-CAM needs a convolutional backbone; transformer blocks have no spatial map");
    }
    auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
    if (x.dim() != 4 || x.size(0) != 1 || x.size(1) != 3) {
        throw ShapeError("Grad-CAM takes one 3 x H x W image");
    }
    const std::string target = layer.value_or(conv->default_target_layer());

    const bool was_training = model.is_training();
    model.eval();
    torch::AutoGradMode grad_on(true);
    torch::Tensor activations;
    auto tap = [&](const torch::Tensor& a) {
        // Detach so the map exists even when the backbone is frozen.
        activations = a.detach().requires_grad_(true);
        return activations;
    };
    torch::Tensor score;
    try {
        const auto logits = single->head()->forward(conv->forward_tapped(x.to(torch::kFloat32), target, tap));
        score = logits[0][target_class];
    } catch (...) {
        model.train(was_training);
        throw;
    }
    model.train(was_training);
    if (activations.dim() != 4) {
        throw UnsupportedLayerError("layer '" + target + "' does not produce a spatial feature map");
    }
    if (!score.requires_grad()) {
        throw StateError("class score is disconnected from layer '" + target + "'");
    }
    const auto grads = torch::autograd::grad({score}, {activations}, {}, false, false, /*allow_unused=*/true);
    if (grads.empty() || !grads[0].defined()) {
        throw StateError("no gradient reached layer '" + target + "'");
    }
    torch::NoGradGuard no_grad;
    const auto weights = grads[0].mean({2, 3}, /*keepdim=*/true); // 1 x K x 1 x 1
    const auto raw = torch::relu((weights * activations.detach()).sum(1)).squeeze(0);

    Heatmap h;
    h.source = normalize_heatmap(raw);
    const auto up = torch::nn::functional::interpolate(
        h.source.unsqueeze(0).unsqueeze(0),
        torch::nn::functional::InterpolateFuncOptions()
            .size(std::vector<std::int64_t>{x.size(2), x.size(3)})
            .mode(torch::kBilinear)
            .align_corners(false));
    h.values = normalize_heatmap(up.squeeze(0).squeeze(0)).contiguous();
    h.source_layer = target;
    h.target_class = target_class;
    return h;
}

Heatmap grad_cam(models::ModelHandle& model, const torch::Tensor& image, const std::optional<std::string>& layer,
                 int target_class) {
    if (!models::is_cnn(model.spec.backbone)) {
        throw UnsupportedLayerError(std::string(models::to_string(model.spec.backbone)) +
                                    " is a transformer; Grad-CAM is limited to CNN backbones");
    }
    return grad_cam(*model.module, image, layer, target_class);
}

RgbImage overlay(const RgbImage& image, const torch::Tensor& heatmap, double opacity) {
    if (!(opacity >= 0.0 && opacity <= 1.0)) {
        throw ParameterError("opacity must lie in [0, 1]");
    }
    if (heatmap.dim() != 2) {
        throw ShapeError("heatmap must be H x W");
    }
    const auto hm = heatmap.to(torch::kFloat32).clamp(0.0, 1.0).contiguous();
    cv::Mat src(static_cast<int>(hm.size(0)), static_cast<int>(hm.size(1)), CV_32F, hm.data_ptr<float>());
    cv::Mat resized;
    cv::resize(src, resized, cv::Size(image.width(), image.height()), 0, 0, cv::INTER_LINEAR);
    cv::Mat u8, bgr, rgb;
    resized.convertTo(u8, CV_8U, 255.0);
    cv::applyColorMap(u8, bgr, cv::COLORMAP_JET);
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
    cv::Mat out;
    cv::addWeighted(image.mat(), 1.0 - opacity, rgb, opacity, 0.0, out);
    return RgbImage(out);
}

RegionMass region_mass(const torch::Tensor& heatmap, double radius_fraction) {
    const auto H = heatmap.size(0);
    const auto W = heatmap.size(1);
    const auto ys = torch::arange(H, torch::kFloat64).add(0.5 - H / 2.0).unsqueeze(1);
    const auto xs = torch::arange(W, torch::kFloat64).add(0.5 - W / 2.0).unsqueeze(0);
    const double r = radius_fraction * static_cast<double>(std::min(H, W));
    const auto inside = (ys * ys + xs * xs) <= r * r;
    const auto v = heatmap.to(torch::kFloat64);
    RegionMass m;
    const auto n_in = inside.sum().item<double>();
    const auto n_out = static_cast<double>(H * W) - n_in;
    m.inside = n_in > 0 ? v.masked_select(inside).sum().item<double>() / n_in : 0.0;
    m.outside = n_out > 0 ? v.masked_select(inside.logical_not()).sum().item<double>() / n_out : 0.0;
    return m;
}

void write_heatmap_csv(const std::filesystem::path& path, const torch::Tensor& heatmap) {
    const auto hm = heatmap.to(torch::kFloat64).contiguous();
    const auto acc = hm.accessor<double, 2>();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    for (std::int64_t i = 0; i < hm.size(0); ++i) {
        for (std::int64_t j = 0; j < hm.size(1); ++j) {
            out << (j ? "," : "") << csv::fmt(acc[i][j]);
        }
        out << '\n';
    }
    if (!out) {
        throw IoError("cannot write heatmap: " + path.string());
    }
}

torch::Tensor read_heatmap_csv(const std::filesystem::path& path) {
    const auto table = csv::read_file(path);
    std::vector<double> values;
    const auto cols = table.header.size();
    auto take = [&](const csv::Row& row) {
        if (row.size() != cols) {
            throw SchemaError("ragged heatmap grid in " + path.string());
        }
        for (const auto& c : row) {
            values.push_back(std::stod(c));
        }
    };
    take(table.header);
    for (const auto& r : table.rows) {
        take(r);
    }
    return torch::tensor(values, torch::kFloat64)
        .view({static_cast<std::int64_t>(table.rows.size() + 1), static_cast<std::int64_t>(cols)})
        .to(torch::kFloat32);
}

} // namespace cataract::explain
