#include "cataract/preprocess.hpp"

#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "cataract/errors.hpp"
#include "cataract/rng.hpp"

namespace cataract::preprocess {

void NormalizationStats::validate() const {
    for (double s : std) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ParameterError("normalization std must be positive in every channel");
        }
    }
}

AugmentationPolicy AugmentationPolicy::identity() {
    AugmentationPolicy p;
    p.crop_scale_range = {1.0, 1.0};
    p.crop_aspect_range = {1.0, 1.0};
    p.hflip_probability = 0.0;
    p.rotation_degrees = 0.0;
    p.brightness_jitter = 0.0;
    p.contrast_jitter = 0.0;
    return p;
}

void AugmentationPolicy::validate() const {
    const auto [s0, s1] = crop_scale_range;
    if (!(s0 > 0.0 && s0 <= s1 && s1 <= 1.0)) {
        throw ParameterError("crop_scale_range must satisfy 0 < min <= max <= 1");
    }
    const auto [a0, a1] = crop_aspect_range;
    if (!(a0 > 0.0 && a0 <= a1)) {
        throw ParameterError("crop_aspect_range must satisfy 0 < min <= max");
    }
    if (!(hflip_probability >= 0.0 && hflip_probability <= 1.0)) {
        throw ParameterError("hflip_probability must lie in [0, 1]");
    }
    if (!(rotation_degrees >= 0.0 && rotation_degrees <= 180.0)) {
        throw ParameterError("rotation_degrees must lie in [0, 180]");
    }
    if (!(brightness_jitter >= 0.0 && brightness_jitter < 1.0) || !(contrast_jitter >= 0.0 && contrast_jitter < 1.0)) {
        throw ParameterError("brightness/contrast jitter must lie in [0, 1)");
    }
}

namespace {

torch::Tensor channel_view(const std::array<double, 3>& v, const torch::Tensor& like) {
    auto t = torch::tensor({v[0], v[1], v[2]}, torch::TensorOptions().dtype(torch::kDouble)).to(like.scalar_type());
    return like.dim() == 4 ? t.view({1, 3, 1, 1}) : t.view({3, 1, 1});
}

void check_channels(const torch::Tensor& t) {
    if (!((t.dim() == 3 && t.size(0) == 3) || (t.dim() == 4 && t.size(1) == 3))) {
        throw ShapeError("expected a 3xHxW or Nx3xHxW tensor");
    }
}

void check_image(const RgbImage& image) {
    if (image.empty() || image.height() < 1 || image.width() < 1) {
        throw DecodeError("image has no pixels");
    }
    if (image.mat().type() != CV_32FC3) {
        throw DecodeError("image is not 3-channel RGB");
    }
}

cv::Mat resize_to(const cv::Mat& src, int size) {
    if (src.rows == size && src.cols == size) {
        return src.clone();
    }
    cv::Mat out;
    cv::resize(src, out, cv::Size(size, size), 0.0, 0.0, cv::INTER_LINEAR);
    return out;
}

torch::Tensor finish(const cv::Mat& rgb) {
    return normalize(to_chw(RgbImage(rgb)));
}

} // namespace

torch::Tensor normalize(const torch::Tensor& pixels, const NormalizationStats& stats) {
    stats.validate();
    check_channels(pixels);
    return (pixels - channel_view(stats.mean, pixels)) / channel_view(stats.std, pixels);
}

torch::Tensor denormalize(const torch::Tensor& normalized, const NormalizationStats& stats) {
    stats.validate();
    check_channels(normalized);
    return normalized * channel_view(stats.std, normalized) + channel_view(stats.mean, normalized);
}

torch::Tensor to_chw(const RgbImage& image) {
    check_image(image);
    const cv::Mat& m = image.mat().isContinuous() ? image.mat() : image.mat().clone();
    auto hwc = torch::from_blob(const_cast<float*>(m.ptr<float>()), {m.rows, m.cols, 3}, torch::kFloat32);
    return hwc.permute({2, 0, 1}).contiguous();
}

RgbImage from_chw(const torch::Tensor& chw) {
    if (chw.dim() != 3 || chw.size(0) != 3) {
        throw ShapeError("expected a 3xHxW tensor");
    }
    auto hwc = chw.detach().to(torch::kFloat32).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
    cv::Mat m(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_32FC3, hwc.data_ptr<float>());
    return RgbImage(m.clone());
}

torch::Tensor eval_transform(const RgbImage& image, int size) {
    check_image(image);
    return finish(resize_to(image.mat(), size));
}

torch::Tensor train_transform(const RgbImage& image, const AugmentationPolicy& policy, std::uint64_t rng_seed,
                              int size) {
    check_image(image);
    policy.validate();
    Rng rng(rng_seed);

    const cv::Mat& src = image.mat();
    const double W = src.cols;
    const double H = src.rows;

    // Random resized crop. Aspect is relative to the source so that scale 1 and
    // aspect 1 select the whole image.
    cv::Rect roi(0, 0, src.cols, src.rows);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double scale = rng.uniform(policy.crop_scale_range.first, policy.crop_scale_range.second);
        const double log_aspect =
            rng.uniform(std::log(policy.crop_aspect_range.first), std::log(policy.crop_aspect_range.second));
        const double aspect = std::exp(log_aspect);
        const int w = static_cast<int>(std::lround(W * std::sqrt(scale * aspect)));
        const int h = static_cast<int>(std::lround(H * std::sqrt(scale / aspect)));
        if (w >= 1 && h >= 1 && w <= src.cols && h <= src.rows) {
            const int x = static_cast<int>(rng.between(0, src.cols - w));
            const int y = static_cast<int>(rng.between(0, src.rows - h));
            roi = cv::Rect(x, y, w, h);
            break;
        }
    }
    cv::Mat img = resize_to(src(roi), size);

    if (rng.bernoulli(policy.hflip_probability)) {
        cv::flip(img, img, 1);
    }

    const double angle = rng.uniform(-policy.rotation_degrees, policy.rotation_degrees);
    if (angle != 0.0) {
        const cv::Point2f centre(static_cast<float>(size - 1) / 2.0f, static_cast<float>(size - 1) / 2.0f);
        const cv::Mat rot = cv::getRotationMatrix2D(centre, angle, 1.0);
        cv::Mat rotated;
        cv::warpAffine(img, rotated, rot, img.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
        img = rotated;
    }

    const double brightness = rng.uniform(1.0 - policy.brightness_jitter, 1.0 + policy.brightness_jitter);
    if (brightness != 1.0) {
        img.convertTo(img, CV_32FC3, brightness);
        cv::min(img, 1.0, img);
    }
    const double contrast = rng.uniform(1.0 - policy.contrast_jitter, 1.0 + policy.contrast_jitter);
    if (contrast != 1.0) {
        cv::Mat gray;
        cv::cvtColor(img, gray, cv::COLOR_RGB2GRAY);
        const double mean = cv::mean(gray)[0];
        img.convertTo(img, CV_32FC3, contrast, (1.0 - contrast) * mean);
        cv::min(img, 1.0, img);
        cv::max(img, 0.0, img);
    }
    return finish(img);
}

void validate_image_tensor(const torch::Tensor& tensor, int size) {
    if (tensor.dim() != 3 || tensor.size(0) != 3 || tensor.size(1) != size || tensor.size(2) != size) {
        throw ShapeError("image tensor must be 3x" + std::to_string(size) + "x" + std::to_string(size));
    }
    if (!torch::isfinite(tensor).all().item<bool>()) {
        throw ShapeError("image tensor contains non-finite values");
    }
}

RgbImage to_display_image(const torch::Tensor& normalized, const NormalizationStats& stats) {
    return from_chw(denormalize(normalized.detach().to(torch::kFloat32), stats));
}

} // namespace cataract::preprocess
