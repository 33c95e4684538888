#include "cataract/loader.hpp"

#include <torch/torch.h>

#include "cataract/errors.hpp"
#include "cataract/image.hpp"
#include "cataract/rng.hpp"

namespace cataract::training {

ImageDataset::ImageDataset(LoaderOptions options) : options_(std::move(options)) {
    options_.augmentation.validate();
    options_.stats.validate();
}

std::filesystem::path ImageDataset::resolve(const std::string& path) const {
    std::filesystem::path p(path);
    return p.is_absolute() || image_root_.empty() ? p : image_root_ / p;
}

torch::Tensor ImageDataset::transform(const std::string& path, std::optional<std::uint64_t> seed) const {
    const auto image = decode_image(resolve(path));
    torch::Tensor pixels = seed ? preprocess::train_transform(image, options_.augmentation, *seed, options_.image_size)
                                : preprocess::eval_transform(image, options_.image_size);
    // eval/train transforms normalize with ImageNet statistics; re-map when
    // a dataset carries its own.
    if (options_.stats.mean != preprocess::kImageNetStats.mean || options_.stats.std != preprocess::kImageNetStats.std) {
        pixels = preprocess::normalize(preprocess::denormalize(pixels), options_.stats);
    }
    return pixels;
}

Batch ImageDataset::batch(const std::vector<std::size_t>& indices, std::optional<std::uint64_t> augment_seed) const {
    if (indices.empty()) {
        throw InputError("empty batch requested");
    }
    std::vector<torch::Tensor> lefts, rights;
    std::vector<std::int64_t> labels;
    lefts.reserve(indices.size());
    for (const auto i : indices) {
        std::optional<std::uint64_t> seed;
        if (augment_seed) {
            seed = derive_seed({*augment_seed, i});
        }
        auto [l, r] = load(i, seed);
        lefts.push_back(std::move(l));
        if (r.defined()) {
            rights.push_back(std::move(r));
        }
        labels.push_back(static_cast<std::int64_t>(label(i)));
    }
    Batch b;
    b.left = torch::stack(lefts);
    if (!rights.empty()) {
        b.right = torch::stack(rights);
    }
    b.labels = torch::tensor(labels, torch::kInt64);
    b.indices = indices;
    return b;
}

data::ClassCounts ImageDataset::class_counts() const {
    data::ClassCounts c;
    for (std::size_t i = 0; i < size(); ++i) {
        (label(i) == data::Label::normal ? c.normal : c.cataract) += 1;
    }
    return c;
}

SingleEyeDataset::SingleEyeDataset(std::vector<data::LabeledSample> samples, std::filesystem::path image_root,
                                   LoaderOptions options)
    : ImageDataset(std::move(options)), samples_(std::move(samples)) {
    image_root_ = std::move(image_root);
}

std::pair<torch::Tensor, torch::Tensor> SingleEyeDataset::load(std::size_t index,
                                                               std::optional<std::uint64_t> seed) const {
    return {transform(samples_.at(index).image_path, seed), torch::Tensor()};
}

DualEyeDataset::DualEyeDataset(std::vector<data::DualEyeSample> pairs, std::filesystem::path image_root,
                               LoaderOptions options)
    : ImageDataset(std::move(options)), pairs_(std::move(pairs)) {
    image_root_ = std::move(image_root);
}

std::pair<torch::Tensor, torch::Tensor> DualEyeDataset::load(std::size_t index,
                                                             std::optional<std::uint64_t> seed) const {
    const auto& p = pairs_.at(index);
    std::optional<std::uint64_t> left_seed, right_seed;
    if (seed) {
        left_seed = derive_seed({*seed, 0});
        right_seed = derive_seed({*seed, 1});
    }
    return {transform(p.left_path, left_seed), transform(p.right_path, right_seed)};
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
    if (batch_size == 0) {
        throw ParameterError("batch size must be positive");
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    }
    return out;
}

} // namespace cataract::training
