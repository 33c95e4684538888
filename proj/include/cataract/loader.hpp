#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/types.h>

#include "cataract/dataset.hpp"
#include "cataract/preprocess.hpp"

namespace cataract::training {

/// One mini-batch. `right` is undefined for single-eye data.
struct Batch {
    torch::Tensor left;
    torch::Tensor right;
    torch::Tensor labels; // int64, N
    std::vector<std::size_t> indices;
};

struct LoaderOptions {
    preprocess::AugmentationPolicy augmentation;
    preprocess::NormalizationStats stats = preprocess::kImageNetStats;
    int image_size = preprocess::kInputSize;
};

/// Indexable labelled image collection. Images are decoded lazily on every
/// access, so memory stays flat regardless of corpus size.
class ImageDataset {
public:
    virtual ~ImageDataset() = default;

    virtual std::size_t size() const = 0;
    virtual data::Label label(std::size_t index) const = 0;
    virtual std::string id(std::size_t index) const = 0;
    virtual bool is_dual() const = 0;

    /// Stacks the requested samples. With `augment_seed` the training
    /// transform runs with a per-sample seed derived from (augment_seed,
    /// index); without it the deterministic evaluation transform is used.
    Batch batch(const std::vector<std::size_t>& indices, std::optional<std::uint64_t> augment_seed) const;

    data::ClassCounts class_counts() const;
    const LoaderOptions& options() const noexcept { return options_; }

protected:
    explicit ImageDataset(LoaderOptions options);

    /// Returns (left, right) CHW tensors; right is undefined for single-eye.
    virtual std::pair<torch::Tensor, torch::Tensor> load(std::size_t index,
                                                         std::optional<std::uint64_t> seed) const = 0;

    torch::Tensor transform(const std::string& path, std::optional<std::uint64_t> seed) const;
    std::filesystem::path resolve(const std::string& path) const;

    std::filesystem::path image_root_;

private:
    LoaderOptions options_;
};

class SingleEyeDataset : public ImageDataset {
public:
    /// Relative image paths are resolved against `image_root`.
    SingleEyeDataset(std::vector<data::LabeledSample> samples, std::filesystem::path image_root,
                     LoaderOptions options = {});

    std::size_t size() const override { return samples_.size(); }
    data::Label label(std::size_t index) const override { return samples_.at(index).label; }
    std::string id(std::size_t index) const override { return samples_.at(index).sample_id; }
    bool is_dual() const override { return false; }
    const std::vector<data::LabeledSample>& samples() const noexcept { return samples_; }

protected:
    std::pair<torch::Tensor, torch::Tensor> load(std::size_t index, std::optional<std::uint64_t> seed) const override;

private:
    std::vector<data::LabeledSample> samples_;
};

class DualEyeDataset : public ImageDataset {
public:
    DualEyeDataset(std::vector<data::DualEyeSample> pairs, std::filesystem::path image_root,
                   LoaderOptions options = {});

    std::size_t size() const override { return pairs_.size(); }
    data::Label label(std::size_t index) const override { return pairs_.at(index).label; }
    std::string id(std::size_t index) const override { return pairs_.at(index).patient_id; }
    bool is_dual() const override { return true; }
    const std::vector<data::DualEyeSample>& pairs() const noexcept { return pairs_; }

protected:
    /// Left and right eyes draw independent augmentations.
    std::pair<torch::Tensor, torch::Tensor> load(std::size_t index, std::optional<std::uint64_t> seed) const override;

private:
    std::vector<data::DualEyeSample> pairs_;
};

/// Consecutive index chunks of at most `batch_size`.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size);

} // namespace cataract::training
