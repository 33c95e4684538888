#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

namespace cataract {

/// Decoded RGB image: CV_32FC3, channel order R,G,B, values in [0, 1].
/// Thin wrapper so that BGR/uint8 OpenCV matrices cannot be passed by accident.
class RgbImage {
public:
    RgbImage() = default;

    /// Takes ownership of an existing CV_32FC3 RGB matrix (validated).
    explicit RgbImage(cv::Mat rgb_float);

    static RgbImage zeros(int height, int width);

    const cv::Mat& mat() const noexcept { return mat_; }
    cv::Mat& mat() noexcept { return mat_; }

    int height() const noexcept { return mat_.rows; }
    int width() const noexcept { return mat_.cols; }
    bool empty() const noexcept { return mat_.empty(); }

    /// 8-bit BGR copy for OpenCV encoders (rounded, saturated).
    cv::Mat to_bgr8() const;
    static RgbImage from_bgr8(const cv::Mat& bgr);

private:
    cv::Mat mat_;
};

/// Reads a JPEG/PNG file. Throws IoError for a missing file and DecodeError for
/// unreadable data or anything other than 3-channel 8/16-bit colour.
RgbImage decode_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_jpeg(const std::filesystem::path& path, const RgbImage& image, int quality = 95);

/// Exact equality of pixel values.
bool identical(const RgbImage& a, const RgbImage& b);

} // namespace cataract
