#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>

#include "legslam/geometry.hpp"

namespace legslam {

/// Images are row-major Eigen arrays indexed (row = v, col = u).
template <typename T>
using Image = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using GrayImage = Image<std::uint8_t>;
/// Raw sensor depth; divide by CameraIntrinsics::depth_scale for meters. 0 = invalid.
using DepthImage = Image<std::uint16_t>;
using FloatImage = Image<float>;

/// 8-bit RGB stored as three planes of equal size.
struct RgbImage {
  GrayImage r, g, b;
  RgbImage() = default;
  explicit RgbImage(const GrayImage& gray) : r(gray), g(gray), b(gray) {}
  int width() const { return static_cast<int>(r.cols()); }
  int height() const { return static_cast<int>(r.rows()); }
};

/// Bilinear lookup; caller guarantees 0 <= x <= cols-1, 0 <= y <= rows-1.
inline float sample_bilinear(const FloatImage& img, float x, float y) {
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min<int>(x0 + 1, static_cast<int>(img.cols()) - 1);
  const int y1 = std::min<int>(y0 + 1, static_cast<int>(img.rows()) - 1);
  const float ax = x - static_cast<float>(x0);
  const float ay = y - static_cast<float>(y0);
  return (1.0f - ay) * ((1.0f - ax) * img(y0, x0) + ax * img(y0, x1)) +
         ay * ((1.0f - ax) * img(y1, x0) + ax * img(y1, x1));
}

FloatImage to_float(const GrayImage& img);

/// Loads 8-bit gray/RGB(A) PNG as gray (luma). Throws IoError.
GrayImage read_png_gray(const std::filesystem::path& path);
/// Loads a 16-bit single-channel PNG. Throws IoError.
DepthImage read_png_depth(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const GrayImage& img);
void write_png(const std::filesystem::path& path, const DepthImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);

void draw_cross(RgbImage& img, const Pixel2& px, int half_size, std::uint8_t r, std::uint8_t g,
                std::uint8_t b);

}  // namespace legslam
