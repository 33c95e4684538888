#include "cataract/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <tuple>
#include <unordered_set>

namespace cataract::data {

namespace {

constexpr std::string_view kFullWidthComma = "\xEF\xBC\x8C"; // U+FF0C

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

Gender parse_gender(std::string_view cell) {
    const auto v = lower(trim(cell));
    if (v == "male" || v == "m") {
        return Gender::male;
    }
    if (v == "female" || v == "f") {
        return Gender::female;
    }
    return Gender::unknown;
}

std::optional<Label> parse_label(std::string_view cell) {
    const auto v = trim(cell);
    if (v == "0") {
        return Label::normal;
    }
    if (v == "1") {
        return Label::cataract;
    }
    return std::nullopt;
}

} // namespace

std::string_view to_string(Label label) {
    return label == Label::normal ? "normal" : "cataract";
}

std::string_view to_string(Gender gender) {
    switch (gender) {
    case Gender::male:
        return "Male";
    case Gender::female:
        return "Female";
    default:
        return "Unknown";
    }
}

std::vector<std::string> split_keywords(std::string_view cell) {
    std::string normalized;
    normalized.reserve(cell.size());
    for (std::size_t i = 0; i < cell.size();) {
        if (cell.substr(i).starts_with(kFullWidthComma)) {
            normalized.push_back(',');
            i += kFullWidthComma.size();
        } else {
            normalized.push_back(cell[i++]);
        }
    }
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= normalized.size()) {
        auto end = normalized.find(',', start);
        if (end == std::string::npos) {
            end = normalized.size();
        }
        auto kw = lower(trim(std::string_view(normalized).substr(start, end - start)));
        if (!kw.empty()) {
            out.push_back(std::move(kw));
        }
        start = end + 1;
    }
    return out;
}

std::optional<Label> eye_label(const std::vector<std::string>& keywords) {
    if (keywords.empty()) {
        return std::nullopt;
    }
    const bool has_cataract = std::find(keywords.begin(), keywords.end(), "cataract") != keywords.end();
    const bool has_normal = std::find(keywords.begin(), keywords.end(), "normal fundus") != keywords.end();
    const bool only_normal = std::all_of(keywords.begin(), keywords.end(),
                                         [](const std::string& k) { return k == "normal fundus"; });
    // A list naming both a normal fundus and a cataract contradicts itself.
    if (has_cataract && has_normal) {
        return std::nullopt;
    }
    if (has_cataract) {
        return Label::cataract;
    }
    return only_normal ? std::optional<Label>(Label::normal) : std::nullopt;
}

MetadataLoad parse_metadata(const csv::Table& table) {
    std::array<std::size_t, columns::kAll.size()> idx{};
    for (std::size_t k = 0; k < columns::kAll.size(); ++k) {
        const auto found = table.column(columns::kAll[k]);
        if (!found) {
            throw SchemaError("metadata is missing required column '" + std::string(columns::kAll[k]) + "'");
        }
        idx[k] = *found;
    }
    const auto [i_id, i_age, i_sex, i_left, i_right, i_lkw, i_rkw] = idx;
    const std::size_t needed = *std::max_element(idx.begin(), idx.end()) + 1;

    MetadataLoad out;
    std::unordered_set<std::string> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line = r + 2;
        RejectedRow reject{line, row.empty() ? std::string{} : trim(row[std::min(i_id, row.size() - 1)]), {}};
        if (row.size() < needed) {
            reject.patient_id = row.size() > i_id ? trim(row[i_id]) : std::string{};
            reject.reason = "row has " + std::to_string(row.size()) + " fields, expected at least " +
                            std::to_string(needed);
            out.rejects.push_back(std::move(reject));
            continue;
        }
        PatientRecord rec;
        rec.patient_id = trim(row[i_id]);
        reject.patient_id = rec.patient_id;
        rec.left_image = trim(row[i_left]);
        rec.right_image = trim(row[i_right]);
        rec.gender = parse_gender(row[i_sex]);
        rec.left_keywords = split_keywords(row[i_lkw]);
        rec.right_keywords = split_keywords(row[i_rkw]);

        const auto age_cell = trim(row[i_age]);
        bool age_ok = true;
        if (!age_cell.empty()) {
            int age = 0;
            const auto* end = age_cell.data() + age_cell.size();
            const auto res = std::from_chars(age_cell.data(), end, age);
            age_ok = res.ec == std::errc{} && res.ptr == end && age >= 0;
            if (age_ok) {
                rec.age = age;
            }
        }

        if (rec.patient_id.empty()) {
            reject.reason = "empty patient id";
        } else if (rec.left_image.empty()) {
            reject.reason = "missing left image reference";
        } else if (rec.right_image.empty()) {
            reject.reason = "missing right image reference";
        } else if (rec.left_keywords.empty()) {
            reject.reason = "unparseable left diagnostic keywords";
        } else if (rec.right_keywords.empty()) {
            reject.reason = "unparseable right diagnostic keywords";
        } else if (!age_ok) {
            reject.reason = "unparseable age '" + age_cell + "'";
        } else if (!seen.insert(rec.patient_id).second) {
            reject.reason = "duplicate patient id";
        }
        if (!reject.reason.empty()) {
            out.rejects.push_back(std::move(reject));
            continue;
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

MetadataLoad load_metadata(const std::filesystem::path& csv_path) {
    if (!std::filesystem::is_regular_file(csv_path)) {
        throw IoError("metadata file not found: " + csv_path.string());
    }
    return parse_metadata(csv::read_file(csv_path));
}

namespace {

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) {
            out += "; ";
        }
        out += p;
    }
    return out;
}

} // namespace

std::vector<LabeledSample> filter_binary(const std::vector<PatientRecord>& records,
                                         std::vector<DroppedEye>* dropped) {
    std::vector<LabeledSample> out;
    for (const auto& rec : records) {
        const std::array<std::tuple<const char*, const std::string*, const std::vector<std::string>*>, 2> eyes = {
            std::tuple{"left", &rec.left_image, &rec.left_keywords},
            std::tuple{"right", &rec.right_image, &rec.right_keywords}};
        for (const auto& [side, image, keywords] : eyes) {
            if (const auto label = eye_label(*keywords)) {
                out.push_back({rec.patient_id + "_" + side, *image, *label});
            } else if (dropped) {
                dropped->push_back({rec.patient_id, side, "non-binary keywords: " + join(*keywords)});
            }
        }
    }
    return out;
}

std::vector<DualEyeSample> build_dual_eye_samples(const std::vector<PatientRecord>& records,
                                                  std::vector<DroppedEye>* dropped) {
    std::vector<DualEyeSample> out;
    for (const auto& rec : records) {
        const auto left = eye_label(rec.left_keywords);
        const auto right = eye_label(rec.right_keywords);
        if (left && right) {
            out.push_back({rec.patient_id, rec.left_image, rec.right_image, fuse_labels(*left, *right)});
        } else if (dropped) {
            dropped->push_back({rec.patient_id, "pair",
                                std::string(left ? "" : "left ") + (right ? "" : "right ") + "eye not binary-labeled"});
        }
    }
    return out;
}

std::size_t stratified_train_count(std::size_t class_count, double ratio) {
    auto n = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(class_count) + 1e-9));
    return std::clamp<std::size_t>(n, 1, class_count - 1);
}

void write_sample_manifest(const std::filesystem::path& path, const std::vector<LabeledSample>& samples) {
    std::vector<csv::Row> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) {
        rows.push_back({s.sample_id, s.image_path, std::to_string(static_cast<int>(s.label))});
    }
    csv::write_file(path, {"id", "path", "label"}, rows);
}

void write_pair_manifest(const std::filesystem::path& path, const std::vector<DualEyeSample>& pairs) {
    std::vector<csv::Row> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) {
        rows.push_back({p.patient_id, p.left_path, p.right_path, std::to_string(static_cast<int>(p.label))});
    }
    csv::write_file(path, {"id", "left", "right", "label"}, rows);
}

namespace {

std::size_t require(const csv::Table& t, std::string_view name, const std::filesystem::path& path) {
    const auto c = t.column(name);
    if (!c) {
        throw SchemaError("manifest " + path.string() + " is missing column '" + std::string(name) + "'");
    }
    return *c;
}

Label require_label(std::string_view cell, const std::filesystem::path& path) {
    const auto label = parse_label(cell);
    if (!label) {
        throw SchemaError("manifest " + path.string() + " has invalid label '" + std::string(cell) + "'");
    }
    return *label;
}

} // namespace

std::vector<LabeledSample> read_sample_manifest(const std::filesystem::path& path) {
    const auto t = csv::read_file(path);
    const auto i_id = require(t, "id", path);
    const auto i_path = require(t, "path", path);
    const auto i_label = require(t, "label", path);
    std::vector<LabeledSample> out;
    for (const auto& row : t.rows) {
        if (row.size() < t.header.size()) {
            throw SchemaError("manifest " + path.string() + " has a short row");
        }
        out.push_back({row[i_id], row[i_path], require_label(row[i_label], path)});
    }
    return out;
}

std::vector<DualEyeSample> read_pair_manifest(const std::filesystem::path& path) {
    const auto t = csv::read_file(path);
    const auto i_id = require(t, "id", path);
    const auto i_left = require(t, "left", path);
    const auto i_right = require(t, "right", path);
    const auto i_label = require(t, "label", path);
    std::vector<DualEyeSample> out;
    for (const auto& row : t.rows) {
        if (row.size() < t.header.size()) {
            throw SchemaError("manifest " + path.string() + " has a short row");
        }
        out.push_back({row[i_id], row[i_left], row[i_right], require_label(row[i_label], path)});
    }
    return out;
}

void write_rejects(const std::filesystem::path& path, const std::vector<RejectedRow>& rejects,
                   const std::vector<DroppedEye>& dropped) {
    std::vector<csv::Row> rows;
    for (const auto& r : rejects) {
        rows.push_back({"row", std::to_string(r.line), r.patient_id, "", r.reason});
    }
    for (const auto& d : dropped) {
        rows.push_back({"eye", "", d.patient_id, d.side, d.reason});
    }
    csv::write_file(path, {"kind", "line", "patient_id", "side", "reason"}, rows);
}

} // namespace cataract::data
