#include "reshape/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>
#include <vector>

#include "reshape/error.hpp"

namespace reshape {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

inline uint8_t to_u8(float v) {
  float x = (std::clamp(v, -1.0f, 1.0f) + 1.0f) * 0.5f * 255.0f;
  int q = static_cast<int>(x + 0.5f);
  return static_cast<uint8_t>(std::clamp(q, 0, 255));
}

inline float from_u8(uint8_t v) { return static_cast<float>(v) / 255.0f * 2.0f - 1.0f; }

}  // namespace

Tensor load_image(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open image: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw IoError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG: " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalize everything to 8-bit RGB.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int W = static_cast<int>(png_get_image_width(png, info));
  const int H = static_cast<int>(png_get_image_height(png, info));

  std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
  Tensor out({3, H, W});
  for (int r = 0; r < H; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch)
        out.at(ch, r, c) = from_u8(row[static_cast<size_t>(c) * 3 + ch]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void save_image(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw ShapeError("save_image: expected [1|3,H,W], got " + image.shape_str());
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write image: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch)
        row[static_cast<size_t>(c) * 3 + ch] = to_u8(image.at(C == 3 ? ch : 0, r, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace reshape
