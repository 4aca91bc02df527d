#include "legslam/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace legslam {

FloatImage to_float(const GrayImage& img) { return img.cast<float>(); }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return f;
}

struct PngData {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // packed rows, big-endian for 16-bit
};

PngData read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::IoError, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorCode::IoError, "png_create_info_struct failed");
  }
  PngData out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoError, "malformed png " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * static_cast<std::size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.bytes.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_raw(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
                   const std::vector<std::uint8_t>& bytes) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::IoError, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "png write failed " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 1);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + rowbytes * y));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayImage read_png_gray(const std::filesystem::path& path) {
  const PngData d = read_png(path);
  GrayImage img(d.height, d.width);
  const int step = d.bit_depth / 8;
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const std::uint8_t* p = d.bytes.data() + (static_cast<std::size_t>(y) * d.width + x) * d.channels * step;
      if (d.channels >= 3) {
        const double luma = 0.299 * p[0] + 0.587 * p[step] + 0.114 * p[2 * step];
        img(y, x) = static_cast<std::uint8_t>(std::lround(luma));
      } else {
        img(y, x) = p[0];
      }
    }
  }
  return img;
}

DepthImage read_png_depth(const std::filesystem::path& path) {
  const PngData d = read_png(path);
  if (d.bit_depth != 16 || d.channels != 1) {
    throw Error(ErrorCode::IoError, "depth png must be 16-bit single channel: " + path.string());
  }
  DepthImage img(d.height, d.width);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const std::uint8_t* p = d.bytes.data() + (static_cast<std::size_t>(y) * d.width + x) * 2;
      img(y, x) = static_cast<std::uint16_t>((p[0] << 8) | p[1]);
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<std::uint8_t> bytes(img.data(), img.data() + img.size());
  write_png_raw(path, static_cast<int>(img.cols()), static_cast<int>(img.rows()), PNG_COLOR_TYPE_GRAY, 8,
                bytes);
}

void write_png(const std::filesystem::path& path, const DepthImage& img) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.size()) * 2);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(img.data()[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(img.data()[i] & 0xff);
  }
  write_png_raw(path, static_cast<int>(img.cols()), static_cast<int>(img.rows()), PNG_COLOR_TYPE_GRAY, 16,
                bytes);
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  const std::size_t n = static_cast<std::size_t>(img.r.size());
  std::vector<std::uint8_t> bytes(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    bytes[3 * i] = img.r.data()[i];
    bytes[3 * i + 1] = img.g.data()[i];
    bytes[3 * i + 2] = img.b.data()[i];
  }
  write_png_raw(path, img.width(), img.height(), PNG_COLOR_TYPE_RGB, 8, bytes);
}

void draw_cross(RgbImage& img, const Pixel2& px, int half_size, std::uint8_t r, std::uint8_t g,
                std::uint8_t b) {
  const int cx = static_cast<int>(std::lround(px.x()));
  const int cy = static_cast<int>(std::lround(px.y()));
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
    img.r(y, x) = r;
    img.g(y, x) = g;
    img.b(y, x) = b;
  };
  for (int d = -half_size; d <= half_size; ++d) {
    put(cx + d, cy);
    put(cx, cy + d);
  }
}

}  // namespace legslam
