#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include <torch/types.h>

#include "cataract/image.hpp"

namespace cataract::preprocess {

inline constexpr int kInputSize = 224;

struct NormalizationStats {
    std::array<double, 3> mean;
    std::array<double, 3> std;

    void validate() const;
};

/// ImageNet statistics shared by the train, eval and explain paths.
inline constexpr NormalizationStats kImageNetStats{{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};

struct AugmentationPolicy {
    std::pair<double, double> crop_scale_range{0.8, 1.0};
    /// Crop aspect ratio relative to the source image aspect (log-uniform).
    std::pair<double, double> crop_aspect_range{3.0 / 4.0, 4.0 / 3.0};
    double hflip_probability = 0.5;
    double rotation_degrees = 15.0;
    double brightness_jitter = 0.2;
    double contrast_jitter = 0.2;

    /// A policy whose train transform reduces to eval_transform.
    static AugmentationPolicy identity();

    /// Throws ParameterError on out-of-range fields.
    void validate() const;
};

/// out[c] = (in[c] - mean[c]) / std[c] over a 3xHxW (or Nx3xHxW) tensor.
torch::Tensor normalize(const torch::Tensor& pixels, const NormalizationStats& stats = kImageNetStats);
torch::Tensor denormalize(const torch::Tensor& normalized, const NormalizationStats& stats = kImageNetStats);

/// HxWx3 float image -> 3xHxW float tensor (no scaling).
torch::Tensor to_chw(const RgbImage& image);
/// 3xHxW tensor in [0,1] -> image (values clamped to [0,1]).
RgbImage from_chw(const torch::Tensor& chw);

/// Bilinear resize to 224x224 followed by normalization. Pure.
torch::Tensor eval_transform(const RgbImage& image, int size = kInputSize);

/// random-resized-crop -> horizontal flip -> rotation (black fill) ->
/// brightness/contrast jitter -> normalize. Pure in (image, policy, seed).
torch::Tensor train_transform(const RgbImage& image, const AugmentationPolicy& policy, std::uint64_t rng_seed,
                              int size = kInputSize);

/// Throws ShapeError unless the tensor is 3 x size x size with finite values.
void validate_image_tensor(const torch::Tensor& tensor, int size = kInputSize);

/// Undo normalization of a model input tensor for display.
RgbImage to_display_image(const torch::Tensor& normalized, const NormalizationStats& stats = kImageNetStats);

} // namespace cataract::preprocess
