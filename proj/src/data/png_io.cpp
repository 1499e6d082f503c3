#include "residiff/data/dataset.hpp"

#include <opencv2/imgcodecs.hpp>

#include <vector>

namespace residiff::data {

void write_image_png(const std::filesystem::path& path, const Image& img) {
    cv::Mat m(img.height, img.width, CV_8UC3);
    const auto bytes = quantize_image(img);
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            px[2] = bytes[i];             // R
            px[1] = bytes[plane + i];     // G
            px[0] = bytes[2 * plane + i]; // B
        }
    if (!cv::imwrite(path.string(), m))
        throw DataError("failed to write image " + path.string());
}

void write_mask_png(const std::filesystem::path& path, const Grid& mask) {
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) {
            const double v = std::min(1.0, std::max(0.0, mask.at(y, x)));
            m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    if (!cv::imwrite(path.string(), m))
        throw DataError("failed to write mask " + path.string());
}

Image read_image_png(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("failed to read image " + path.string());
    Image img;
    img.height = m.rows;
    img.width = m.cols;
    img.rgb.resize(static_cast<std::size_t>(3) * m.rows * m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const auto& px = m.at<cv::Vec3b>(y, x);
            img.at(0, y, x) = px[2] / 255.0f;
            img.at(1, y, x) = px[1] / 255.0f;
            img.at(2, y, x) = px[0] / 255.0f;
        }
    return img;
}

BinaryMap read_mask_png(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("failed to read mask " + path.string());
    Grid g(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) g.at(y, x) = m.at<std::uint8_t>(y, x) > 127 ? 1.0 : 0.0;
    return BinaryMap(g);
}

ProbMap read_probmap_png(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("failed to read map " + path.string());
    Grid g(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) g.at(y, x) = m.at<std::uint8_t>(y, x) / 255.0;
    return ProbMap(std::move(g));
}

} // namespace residiff::data
