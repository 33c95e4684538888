#pragma once

#include <filesystem>
#include <string>

#include "cataract/dataset.hpp"
#include "cataract/loader.hpp"
#include "cataract/modelzoo.hpp"
#include "cataract/synthdata.hpp"

namespace fixtures {

/// Scratch directory under the system temp dir, emptied on creation.
inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cataract_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Deep copy of every parameter and buffer. named_state() aliases the live
/// tensors, so comparing against it after training proves nothing.
inline std::map<std::string, torch::Tensor> snapshot(const torch::nn::Module& module) {
    auto state = cataract::models::named_state(module);
    for (auto& [k, v] : state) v = v.detach().clone();
    return state;
}

/// A small synthetic corpus written to disk and split 80/20.
struct SynthCorpus {
    cataract::synth::SynthDataset written;
    cataract::data::SplitResult<cataract::data::LabeledSample> split;
    cataract::data::SplitResult<cataract::data::DualEyeSample> pair_split;
};

inline SynthCorpus make_corpus(const std::filesystem::path& dir, std::size_t per_class, int image_size = 64,
                               std::uint64_t seed = 5) {
    cataract::synth::SynthSpec spec;
    spec.n_normal = per_class;
    spec.n_cataract = per_class;
    spec.image_size = image_size;
    spec.seed = seed;
    SynthCorpus c;
    c.written = cataract::synth::generate_dataset(spec, dir);
    const auto load = cataract::data::load_metadata(c.written.metadata_csv);
    c.split = cataract::data::stratified_split(cataract::data::filter_binary(load.records), 0.8, seed);
    c.pair_split = cataract::data::stratified_split(cataract::data::build_dual_eye_samples(load.records), 0.8, seed);
    return c;
}

inline cataract::training::LoaderOptions small_images(int size = 64) {
    cataract::training::LoaderOptions o;
    o.image_size = size;
    return o;
}

} // namespace fixtures
