#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "irwgan/error.hpp"

namespace irwgan {

// One image sample: planar channel-major data (c, h, w), values in [-1, 1].
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> data;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c) : height(h), width(w), channels(c) {
    require(h > 0 && w > 0, "image dimensions must be positive");
    require(c == 1 || c == 3, "channels must be 1 or 3");
    data.assign(static_cast<std::size_t>(h) * w * c, 0.0);
  }

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  std::size_t size() const { return data.size(); }

  bool in_range(double tol = 0.0) const {
    for (double v : data)
      if (!(v >= -1.0 - tol && v <= 1.0 + tol)) return false;
    return true;
  }

  void clamp() {
    for (double& v : data) v = std::clamp(v, -1.0, 1.0);
  }
};

inline double pixel_to_real(int p) { return 2.0 * p / 255.0 - 1.0; }
inline int real_to_pixel(double v) {
  v = std::clamp(v, -1.0, 1.0);
  int p = static_cast<int>(std::lround((v + 1.0) * 127.5));
  return std::clamp(p, 0, 255);
}

// Area-average resampling; exact box filter with fractional coverage.
inline ImageTensor resize_area(const ImageTensor& src, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize target must be positive");
  if (src.height == out_h && src.width == out_w) return src;
  ImageTensor dst(out_h, out_w, src.channels);
  const double ry = static_cast<double>(src.height) / out_h;
  const double rx = static_cast<double>(src.width) / out_w;
  for (int c = 0; c < src.channels; ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      const double y0 = oy * ry, y1 = (oy + 1) * ry;
      const int iy0 = static_cast<int>(std::floor(y0));
      const int iy1 = std::min(src.height, static_cast<int>(std::ceil(y1)));
      for (int ox = 0; ox < out_w; ++ox) {
        const double x0 = ox * rx, x1 = (ox + 1) * rx;
        const int ix0 = static_cast<int>(std::floor(x0));
        const int ix1 = std::min(src.width, static_cast<int>(std::ceil(x1)));
        double acc = 0.0, area = 0.0;
        for (int iy = iy0; iy < iy1; ++iy) {
          const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          for (int ix = ix0; ix < ix1; ++ix) {
            const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            acc += wy * wx * src.at(c, iy, ix);
            area += wy * wx;
          }
        }
        dst.at(c, oy, ox) = acc / area;
      }
    }
  }
  return dst;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

// Decodes an 8-bit PNG (grayscale or RGB; palette/16-bit/alpha inputs are
// converted) into [-1, 1]. Throws Error naming the file on failure.
inline ImageTensor read_png(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, "cannot open file: " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw Error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("cannot decode file: " + path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("unsupported channel count in " + path);
  }

  std::vector<unsigned char> row(static_cast<std::size_t>(w) * channels);
  ImageTensor img(static_cast<int>(h), static_cast<int>(w), channels);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, static_cast<int>(y), static_cast<int>(x)) = pixel_to_real(row[x * channels + c]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::string& path, const ImageTensor& img) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, "cannot open file for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("cannot encode file: " + path);
  }

  png_init_io(png, fp.get());
  const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[static_cast<std::size_t>(x) * img.channels + c] = static_cast<unsigned char>(real_to_pixel(img.at(c, y, x)));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace irwgan
