#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddm {

struct ImageRgb8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> v;  // interleaved RGB, row-major

  std::uint8_t& at(int r, int c, int ch) {
    return v[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
  }
  const std::uint8_t& at(int r, int c, int ch) const {
    return v[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline ImageRgb8 read_png_rgb8(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("png: cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: decode failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize any input layout to 8-bit RGB.
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  ImageRgb8 img;
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.v.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r)
    rows[r] = img.v.data() + static_cast<std::size_t>(r) * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

namespace detail {

inline void write_png(const std::string& path, int width, int height, int color_type,
                      int bit_depth, const std::vector<png_bytep>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("png: cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: encode failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytep*>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_png_rgb8(const std::string& path, const ImageRgb8& img) {
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r)
    rows[r] = const_cast<png_bytep>(img.v.data() + static_cast<std::size_t>(r) * img.width * 3);
  detail::write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 8, rows);
}

inline void write_png_gray8(const std::string& path, int height, int width,
                            const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("png: pixel buffer size mismatch");
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r)
    rows[r] = const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r) * width);
  detail::write_png(path, width, height, PNG_COLOR_TYPE_GRAY, 8, rows);
}

// 1-bit grayscale; nonzero input pixels become white.
inline void write_png_gray1(const std::string& path, int height, int width,
                            const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("png: pixel buffer size mismatch");
  const int stride = (width + 7) / 8;
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(height) * stride, 0);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (pixels[static_cast<std::size_t>(r) * width + c])
        packed[static_cast<std::size_t>(r) * stride + c / 8] |=
            static_cast<std::uint8_t>(0x80u >> (c % 8));
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r)
    rows[r] = packed.data() + static_cast<std::size_t>(r) * stride;
  detail::write_png(path, width, height, PNG_COLOR_TYPE_GRAY, 1, rows);
}

}  // namespace ddm
