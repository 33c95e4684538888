#include "cataract/image.hpp"

#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cataract/errors.hpp"

namespace cataract {

RgbImage::RgbImage(cv::Mat rgb_float) : mat_(std::move(rgb_float)) {
    if (mat_.type() != CV_32FC3) {
        throw DecodeError("RgbImage expects a CV_32FC3 matrix");
    }
}

RgbImage RgbImage::zeros(int height, int width) {
    return RgbImage(cv::Mat(height, width, CV_32FC3, cv::Scalar::all(0)));
}

cv::Mat RgbImage::to_bgr8() const {
    cv::Mat bgr;
    cv::cvtColor(mat_, bgr, cv::COLOR_RGB2BGR);
    cv::Mat out;
    bgr.convertTo(out, CV_8UC3, 255.0);
    return out;
}

RgbImage RgbImage::from_bgr8(const cv::Mat& bgr) {
    if (bgr.type() != CV_8UC3) {
        throw DecodeError("expected an 8-bit 3-channel image");
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    return RgbImage(std::move(f));
}

RgbImage decode_image(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) {
        throw IoError("image not found: " + path.string());
    }
    const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) {
        throw DecodeError("cannot decode image: " + path.string());
    }
    if (raw.channels() != 3) {
        throw DecodeError("image is not RGB (" + std::to_string(raw.channels()) + " channel(s)): " + path.string());
    }
    double scale = 0.0;
    switch (raw.depth()) {
    case CV_8U:
        scale = 1.0 / 255.0;
        break;
    case CV_16U:
        scale = 1.0 / 65535.0;
        break;
    default:
        throw DecodeError("unsupported pixel depth: " + path.string());
    }
    if (raw.rows < 1 || raw.cols < 1) {
        throw DecodeError("image has no pixels: " + path.string());
    }
    cv::Mat rgb;
    cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, scale);
    return RgbImage(std::move(f));
}

namespace {

void write_encoded(const std::filesystem::path& path, const RgbImage& image, const std::vector<int>& params) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), image.to_bgr8(), params)) {
        throw IoError("cannot write image: " + path.string());
    }
}

} // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    write_encoded(path, image, {cv::IMWRITE_PNG_COMPRESSION, 6});
}

void write_jpeg(const std::filesystem::path& path, const RgbImage& image, int quality) {
    write_encoded(path, image, {cv::IMWRITE_JPEG_QUALITY, quality});
}

bool identical(const RgbImage& a, const RgbImage& b) {
    if (a.mat().size() != b.mat().size() || a.mat().type() != b.mat().type()) {
        return false;
    }
    cv::Mat diff;
    cv::compare(a.mat().reshape(1), b.mat().reshape(1), diff, cv::CMP_NE);
    return cv::countNonZero(diff) == 0;
}

} // namespace cataract
