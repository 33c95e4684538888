#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cataract/csv.hpp"
#include "cataract/errors.hpp"
#include "cataract/rng.hpp"

namespace cataract::data {

enum class Gender { male, female, unknown };

enum class Label : std::int64_t { normal = 0, cataract = 1 };

inline constexpr std::size_t kNumClasses = 2;

std::string_view to_string(Label label);
std::string_view to_string(Gender gender);

/// ODIR-5K metadata column names. Additional columns are ignored on input.
namespace columns {
inline constexpr std::string_view kId = "ID";
inline constexpr std::string_view kAge = "Patient Age";
inline constexpr std::string_view kSex = "Patient Sex";
inline constexpr std::string_view kLeftImage = "Left-Fundus";
inline constexpr std::string_view kRightImage = "Right-Fundus";
inline constexpr std::string_view kLeftKeywords = "Left-Diagnostic Keywords";
inline constexpr std::string_view kRightKeywords = "Right-Diagnostic Keywords";
inline constexpr std::array<std::string_view, 7> kAll = {
    kId, kAge, kSex, kLeftImage, kRightImage, kLeftKeywords, kRightKeywords};
} // namespace columns

struct PatientRecord {
    std::string patient_id;
    std::optional<int> age;
    Gender gender = Gender::unknown;
    std::string left_image;
    std::string right_image;
    std::vector<std::string> left_keywords;
    std::vector<std::string> right_keywords;
};

/// A metadata row that did not become a record. `line` is the 1-based line
/// number of the row in the source file (header is line 1).
struct RejectedRow {
    std::size_t line = 0;
    std::string patient_id;
    std::string reason;
};

struct MetadataLoad {
    std::vector<PatientRecord> records;
    std::vector<RejectedRow> rejects;
};

struct LabeledSample {
    std::string sample_id; // "<patient>_left" / "<patient>_right"
    std::string image_path;
    Label label = Label::normal;

    friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct DualEyeSample {
    std::string patient_id;
    std::string left_path;
    std::string right_path;
    Label label = Label::normal;

    friend bool operator==(const DualEyeSample&, const DualEyeSample&) = default;
};

/// An eye that filtering dropped, with the reason.
struct DroppedEye {
    std::string patient_id;
    std::string side;
    std::string reason;
};

/// Parses an in-memory metadata table. Throws SchemaError naming the first
/// missing required column.
MetadataLoad parse_metadata(const csv::Table& table);

/// Throws IoError when the file is missing.
MetadataLoad load_metadata(const std::filesystem::path& csv_path);

/// Splits an ODIR keyword cell on ASCII and full-width commas, trimming and
/// lowercasing every entry. Empty entries are discarded.
std::vector<std::string> split_keywords(std::string_view cell);

/// Per-eye binary label: normal iff every keyword is "normal fundus", cataract
/// iff some keyword is "cataract" and none is "normal fundus". Anything else is not part of the task.
std::optional<Label> eye_label(const std::vector<std::string>& keywords);

/// Either-eye rule: cataract if at least one eye is cataract.
constexpr Label fuse_labels(Label left, Label right) noexcept {
    return (left == Label::cataract || right == Label::cataract) ? Label::cataract : Label::normal;
}

std::vector<LabeledSample> filter_binary(const std::vector<PatientRecord>& records,
                                         std::vector<DroppedEye>* dropped = nullptr);

std::vector<DualEyeSample> build_dual_eye_samples(const std::vector<PatientRecord>& records,
                                                  std::vector<DroppedEye>* dropped = nullptr);

struct ClassCounts {
    std::size_t normal = 0;
    std::size_t cataract = 0;

    std::size_t total() const noexcept { return normal + cataract; }
    std::size_t operator[](Label label) const noexcept {
        return label == Label::normal ? normal : cataract;
    }
    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

template <typename Sample>
ClassCounts class_distribution(const std::vector<Sample>& samples) {
    ClassCounts counts;
    for (const auto& s : samples) {
        (s.label == Label::normal ? counts.normal : counts.cataract) += 1;
    }
    return counts;
}

template <typename Sample>
struct SplitResult {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::uint64_t seed = 0;
    double ratio = 0.0;
};

/// Per-class train size: floor(ratio * n), kept inside [1, n - 1] so that both
/// partitions see every class. The tolerance absorbs products such as
/// 0.7 * 10 that land a hair below an integer.
std::size_t stratified_train_count(std::size_t class_count, double ratio);

/// Stratified partition. Each class is shuffled with a stream derived from
/// (seed, class) and its first stratified_train_count() members go to train.
/// Both partitions keep the input order.
template <typename Sample>
SplitResult<Sample> stratified_split(const std::vector<Sample>& samples, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ParameterError("split ratio must lie in (0, 1)");
    }
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);
    }
    std::vector<char> in_train(samples.size(), 0);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        auto& members = by_class[c];
        if (members.size() < 2) {
            throw StratificationError("class '" + std::string(to_string(static_cast<Label>(c))) + "' has " +
                                      std::to_string(members.size()) + " sample(s); stratification needs at least 2");
        }
        Rng rng(derive_seed({seed, 0x5EED5717ULL, c}));
        rng.shuffle(members);
        const std::size_t n_train = stratified_train_count(members.size(), ratio);
        for (std::size_t k = 0; k < n_train; ++k) {
            in_train[members[k]] = 1;
        }
    }
    SplitResult<Sample> out;
    out.seed = seed;
    out.ratio = ratio;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        (in_train[i] ? out.train : out.validation).push_back(samples[i]);
    }
    return out;
}

/// Manifest CSVs: (path,label) and (left,right,label). Sample ids travel in
/// an extra leading `id` column.
void write_sample_manifest(const std::filesystem::path& path, const std::vector<LabeledSample>& samples);
void write_pair_manifest(const std::filesystem::path& path, const std::vector<DualEyeSample>& pairs);
std::vector<LabeledSample> read_sample_manifest(const std::filesystem::path& path);
std::vector<DualEyeSample> read_pair_manifest(const std::filesystem::path& path);

void write_rejects(const std::filesystem::path& path, const std::vector<RejectedRow>& rejects,
                   const std::vector<DroppedEye>& dropped);

} // namespace cataract::data
