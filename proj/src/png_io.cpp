#include "scribe/png_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include <png.h>

#include "scribe/error.hpp"

namespace scribe {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_rows(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
                const std::vector<std::uint8_t>& bytes, std::size_t row_bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_png8(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw ParameterError("PNG export needs 1 or 3 channels, got " + std::to_string(image.channels));
  }
  const auto w = static_cast<std::size_t>(image.width), h = static_cast<std::size_t>(image.height);
  const auto c = static_cast<std::size_t>(image.channels);
  std::vector<std::uint8_t> bytes(w * h * c);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        bytes[(y * w + x) * c + ch] =
            quantize8(image.at(static_cast<Index>(ch), static_cast<Index>(y), static_cast<Index>(x)));
      }
    }
  }
  write_rows(path, static_cast<int>(w), static_cast<int>(h), 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, bytes,
             w * c);
}

void write_png16_gray(const Eigen::ArrayXXd& values, const std::filesystem::path& path) {
  const auto h = static_cast<std::size_t>(values.rows()), w = static_cast<std::size_t>(values.cols());
  std::vector<std::uint8_t> bytes(w * h * 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint16_t q = quantize16(values(static_cast<Index>(y), static_cast<Index>(x)));
      bytes[(y * w + x) * 2] = static_cast<std::uint8_t>(q >> 8);  // PNG is big-endian
      bytes[(y * w + x) * 2 + 1] = static_cast<std::uint8_t>(q & 0xFF);
    }
  }
  write_rows(path, static_cast<int>(w), static_cast<int>(h), 16, PNG_COLOR_TYPE_GRAY, bytes, w * 2);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host little-endian 16-bit samples
  png_read_update_info(png, info);
  const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  bytes.resize(row_bytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = bytes.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(channels, static_cast<Index>(h), static_cast<Index>(w));
  for (Index y = 0; y < img.height; ++y) {
    for (Index x = 0; x < img.width; ++x) {
      for (Index c = 0; c < channels; ++c) {
        const std::size_t off = static_cast<std::size_t>(y) * row_bytes;
        double v;
        if (out_depth == 16) {
          std::uint16_t s;
          std::memcpy(&s, bytes.data() + off + static_cast<std::size_t>((x * channels + c) * 2), 2);
          v = s / 65535.0;
        } else {
          v = bytes[off + static_cast<std::size_t>(x * channels + c)] / 255.0;
        }
        img.at(c, y, x) = v;
      }
    }
  }
  return img;
}

}  // namespace scribe
