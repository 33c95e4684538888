#include "cataract/synthdata.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>

#include <opencv2/imgproc.hpp>

#include "cataract/csv.hpp"
#include "cataract/errors.hpp"
#include "cataract/rng.hpp"

namespace cataract::synth {

using data::Label;

void SynthSpec::validate() const {
    if (image_size < 32) {
        throw ParameterError("image_size must be at least 32");
    }
    if (!(cataract_blur_sigma > 0) || !std::isfinite(cataract_blur_sigma)) {
        throw ParameterError("cataract_blur_sigma must be positive");
    }
    if (!(opacity_strength >= 0 && opacity_strength <= 1)) {
        throw ParameterError("opacity_strength must lie in [0, 1]");
    }
    if (vessel_count_range.first < 0 || vessel_count_range.first > vessel_count_range.second) {
        throw ParameterError("vessel_count_range must satisfy 0 <= min <= max");
    }
}

RgbImage generate_image(Label label, const SynthSpec& spec, std::uint64_t index) {
    spec.validate();
    Rng rng(derive_seed({spec.seed, index, static_cast<std::uint64_t>(label), 0xF0ED}));
    const int S = spec.image_size;
    const double c = S / 2.0;
    const double r = 0.45 * S;

    cv::Mat img(S, S, CV_32FC3, cv::Scalar::all(0));
    cv::Mat mask(S, S, CV_32F);
    cv::Mat dist(S, S, CV_32F);
    const double tint = rng.uniform(0.85, 1.1);
    const std::array<double, 3> base{0.75 * tint, 0.35 * tint, 0.15 * tint};
    for (int y = 0; y < S; ++y) {
        auto* px = img.ptr<cv::Vec3f>(y);
        for (int x = 0; x < S; ++x) {
            const double d = std::hypot(x - c, y - c);
            dist.at<float>(y, x) = static_cast<float>(d);
            mask.at<float>(y, x) = d < r ? 1.0f : 0.0f;
            if (d < r) {
                const double fall = 1.0 - 0.3 * (d / r) * (d / r);
                px[x] = cv::Vec3f(static_cast<float>(base[0] * fall), static_cast<float>(base[1] * fall),
                                  static_cast<float>(base[2] * fall));
            }
        }
    }

    // Optic disc on a random side, vessels radiating from it.
    const double side = rng.bernoulli(0.5) ? 0.3 * r : -0.3 * r;
    const double ox = c + side - rng.uniform(-0.25, 0.25) * r;
    const double oy = c + rng.uniform(-0.1, 0.1) * r;
    cv::ellipse(img, cv::Point(static_cast<int>(ox), static_cast<int>(oy)),
                cv::Size(static_cast<int>(r * 0.12), static_cast<int>(r * 0.15)), 0, 0, 360,
                cv::Scalar(1.0, 0.9, 0.7), cv::FILLED, cv::LINE_AA);
    const auto vessels = rng.between(spec.vessel_count_range.first, spec.vessel_count_range.second);
    for (std::int64_t v = 0; v < vessels; ++v) {
        std::vector<cv::Point> pts{cv::Point(static_cast<int>(ox), static_cast<int>(oy))};
        double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        double x = ox, y = oy;
        for (int s = 0; s < 8; ++s) {
            angle += rng.uniform(-0.4, 0.4);
            x += std::cos(angle) * r * 0.12;
            y += std::sin(angle) * r * 0.12;
            pts.emplace_back(static_cast<int>(x), static_cast<int>(y));
        }
        const int thickness = static_cast<int>(rng.between(1, 2));
        cv::polylines(img, pts, false, cv::Scalar(0.35, 0.08, 0.05), thickness, cv::LINE_AA);
    }
    cv::Mat mask3;
    cv::merge(std::vector<cv::Mat>{mask, mask, mask}, mask3);
    img = img.mul(mask3);

    if (label == Label::cataract) {
        cv::GaussianBlur(img, img, cv::Size(0, 0), spec.cataract_blur_sigma);
        cv::Mat veil;
        cv::exp(dist.mul(dist) * (-1.0 / (2.0 * (0.5 * r) * (0.5 * r))), veil);
        veil *= spec.opacity_strength;
        cv::Mat veil3;
        cv::merge(std::vector<cv::Mat>{veil, veil, veil}, veil3);
        img = img.mul(cv::Scalar::all(1.0) - veil3) + veil3;
        img = img.mul(mask3);
    }
    cv::min(cv::max(img, 0.0), 1.0, img);
    return RgbImage(img);
}

SynthDataset generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    const std::size_t total = spec.n_normal + spec.n_cataract;
    if (total == 0) {
        throw InputError("synthetic dataset needs at least one image (n_normal + n_cataract = 0)");
    }

    // Pair eyes, cycling through (N,N), (N,C), (C,N), (C,C).
    std::size_t normals = spec.n_normal, cataracts = spec.n_cataract;
    auto take = [&](Label want) -> std::optional<Label> {
        auto& pool = want == Label::normal ? normals : cataracts;
        auto& other = want == Label::normal ? cataracts : normals;
        if (pool > 0) {
            --pool;
            return want;
        }
        if (other > 0) {
            --other;
            return want == Label::normal ? Label::cataract : Label::normal;
        }
        return std::nullopt;
    };
    constexpr std::array<std::array<Label, 2>, 4> combos{{{Label::normal, Label::normal},
                                                          {Label::normal, Label::cataract},
                                                          {Label::cataract, Label::normal},
                                                          {Label::cataract, Label::cataract}}};
    std::vector<std::array<std::optional<Label>, 2>> patients;
    for (std::size_t p = 0; normals + cataracts > 0; ++p) {
        const auto& want = combos[p % combos.size()];
        const auto left = take(want[0]);
        const auto right = take(want[1]);
        patients.push_back({left, right});
    }
    Rng(derive_seed({spec.seed, 0x9A71E275})).shuffle(patients);

    SynthDataset out;
    out.image_dir = out_dir / "images";
    out.metadata_csv = out_dir / "metadata.csv";
    std::filesystem::create_directories(out.image_dir);
    Rng meta_rng(derive_seed({spec.seed, 0xA6E5}));
    std::vector<csv::Row> rows;
    for (std::size_t p = 0; p < patients.size(); ++p) {
        const std::string id = std::to_string(p + 1);
        std::array<std::string, 2> files, keywords;
        std::array<std::optional<Label>, 2> labels = patients[p];
        for (int s = 0; s < 2; ++s) {
            const char* side = s == 0 ? "left" : "right";
            files[s] = id + "_" + side + ".jpg";
            const auto index = 2 * p + static_cast<std::size_t>(s);
            const Label drawn = labels[s].value_or(Label::normal);
            write_jpeg(out.image_dir / files[s], generate_image(drawn, spec, index));
            ++out.images_written;
            if (!labels[s]) {
                keywords[s] = "lens dust";
                continue;
            }
            keywords[s] = *labels[s] == Label::cataract ? "cataract" : "normal fundus";
            out.samples.push_back({id + "_" + side, files[s], *labels[s]});
        }
        if (labels[0] && labels[1]) {
            out.pairs.push_back({id, files[0], files[1], data::fuse_labels(*labels[0], *labels[1])});
        }
        const auto age = meta_rng.between(40, 85);
        const char* sex = meta_rng.bernoulli(0.5) ? "Female" : "Male";
        rows.push_back({id, std::to_string(age), sex, files[0], files[1], keywords[0], keywords[1]});
    }
    csv::Row header;
    for (const auto col : data::columns::kAll) {
        header.emplace_back(col);
    }
    csv::write_file(out.metadata_csv, header, rows);
    return out;
}

double laplacian_variance(const RgbImage& image) {
    cv::Mat grey, lap;
    cv::cvtColor(image.mat(), grey, cv::COLOR_RGB2GRAY);
    grey.convertTo(grey, CV_64F);
    cv::Laplacian(grey, lap, CV_64F);
    cv::Scalar mean, stddev;
    cv::meanStdDev(lap, mean, stddev);
    return stddev[0] * stddev[0];
}

double center_brightness(const RgbImage& image, double fraction) {
    const int w = std::max(1, static_cast<int>(image.width() * fraction));
    const int h = std::max(1, static_cast<int>(image.height() * fraction));
    const cv::Rect roi((image.width() - w) / 2, (image.height() - h) / 2, w, h);
    const auto m = cv::mean(image.mat()(roi));
    return (m[0] + m[1] + m[2]) / 3.0;
}

} // namespace cataract::synth
