#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "cataract/dataset.hpp"
#include "cataract/image.hpp"

namespace cataract::synth {

/// Knobs of the fundus-like generator. Cataract images get a Gaussian blur and
/// a central whitening veil on top of the normal rendering.
struct SynthSpec {
    int image_size = 224;
    std::size_t n_normal = 100;
    std::size_t n_cataract = 100;
    double cataract_blur_sigma = 4.0;
    double opacity_strength = 0.5;
    std::pair<int, int> vessel_count_range{6, 12};
    std::uint64_t seed = 0;

    /// Throws ParameterError.
    void validate() const;
};

/// Pure function of (spec, index, label); pixel values in [0, 1].
RgbImage generate_image(data::Label label, const SynthSpec& spec, std::uint64_t index);

struct SynthDataset {
    std::filesystem::path metadata_csv;
    std::filesystem::path image_dir;
    std::vector<data::LabeledSample> samples;
    std::vector<data::DualEyeSample> pairs;
    std::size_t images_written = 0;
};

/// Writes `<out>/images/<id>_{left,right}.jpg` and the ODIR-layout
/// `<out>/metadata.csv`. Eyes are paired so that the four (left, right)
/// label combinations come round in turn while the counts last; patient rows
/// are then shuffled. With an odd total the last patient's second eye is a
/// filler image carrying a non-binary keyword, which ingestion drops.
///
/// Throws InputError when n_normal + n_cataract == 0.
SynthDataset generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// Variance of the Laplacian of the grey image, a blur measure.
double laplacian_variance(const RgbImage& image);

/// Mean brightness of the centred square covering `fraction` of each side.
double center_brightness(const RgbImage& image, double fraction = 0.25);

} // namespace cataract::synth
