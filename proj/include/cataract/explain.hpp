#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <torch/types.h>

#include "cataract/image.hpp"
#include "cataract/modelzoo.hpp"

namespace cataract::explain {

struct Heatmap {
    torch::Tensor values;   // H x W float32 in [0, 1], upsampled to the input size
    torch::Tensor source;   // normalized map at the feature-map resolution
    std::string source_layer;
    int target_class = 1;
};

/// Grad-CAM against the raw logit of `target_class`.
///
/// `image` is a normalized 3 x H x W (or 1 x 3 x H x W) tensor. The layer
/// defaults to the backbone's final spatial feature map. The model's
/// train/eval mode is restored afterwards; it runs in eval mode.
///
/// Errors: UnsupportedLayerError for transformer backbones or unknown layer
/// names; StateError when the score does not depend on the layer; InputError
/// for Siamese models or a target class outside {0, 1}.
Heatmap grad_cam(models::FundusClassifier& model, const torch::Tensor& image, const std::optional<std::string>& layer,
                 int target_class);
Heatmap grad_cam(models::ModelHandle& model, const torch::Tensor& image, const std::optional<std::string>& layer,
                 int target_class);

/// Divides by the maximum; an all-zero (or negative) map becomes zeros.
/// Idempotent.
torch::Tensor normalize_heatmap(const torch::Tensor& map);

/// JET colormap (blue at 0, red at 1) alpha-blended over `image`:
/// out = (1 - opacity) * image + opacity * colour. The heatmap is resized to
/// the image. Throws ParameterError for opacity outside [0, 1].
RgbImage overlay(const RgbImage& image, const torch::Tensor& heatmap, double opacity = 0.4);

/// Mean heatmap value inside and outside a centred disc of radius
/// `radius_fraction` * min(H, W).
struct RegionMass {
    double inside = 0.0;
    double outside = 0.0;
};
RegionMass region_mass(const torch::Tensor& heatmap, double radius_fraction);

/// One CSV row per heatmap row, 6 decimals, no header.
void write_heatmap_csv(const std::filesystem::path& path, const torch::Tensor& heatmap);
torch::Tensor read_heatmap_csv(const std::filesystem::path& path);

} // namespace cataract::explain
